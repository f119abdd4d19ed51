use gmraim::geo::{
    ecef_to_geodetic, geodetic_to_ecef, EcefPosition, EnuPosition, GeodeticPosition, LocalFrame,
};
use proptest::prelude::*;

const A: f64 = 6_378_137.0;
const B: f64 = 6_356_752.314_245;

#[test]
fn reference_points() {
    let p = geodetic_to_ecef(GeodeticPosition::new(0.0, 0.0, 0.0).unwrap());
    assert!(p.distance(EcefPosition::new(A, 0.0, 0.0)) < 1e-6);
    let p = geodetic_to_ecef(GeodeticPosition::new(0.0, 90.0, 100.0).unwrap());
    assert!(p.distance(EcefPosition::new(0.0, A + 100.0, 0.0)) < 1e-6);
    let p = geodetic_to_ecef(GeodeticPosition::new(90.0, 0.0, 0.0).unwrap());
    assert!(p.distance(EcefPosition::new(0.0, 0.0, B)) < 1e-3);
}

#[test]
fn enu_axes_point_east_north_up() {
    let f = LocalFrame::new(GeodeticPosition::new(0.0, 0.0, 0.0).unwrap());
    let e = f.to_ecef(EnuPosition::new(1.0, 0.0, 0.0));
    let n = f.to_ecef(EnuPosition::new(0.0, 1.0, 0.0));
    let u = f.to_ecef(EnuPosition::new(0.0, 0.0, 1.0));
    assert!(e.distance(EcefPosition::new(A, 1.0, 0.0)) < 1e-9);
    assert!(n.distance(EcefPosition::new(A, 0.0, 1.0)) < 1e-9);
    assert!(u.distance(EcefPosition::new(A + 1.0, 0.0, 0.0)) < 1e-9);
}

proptest! {
    #[test]
    fn enu_round_trip_within_10km(
        lat in -85.0f64..85.0, lon in -180.0f64..180.0, h in -100.0f64..3000.0,
        e in -1e4f64..1e4, n in -1e4f64..1e4, u in -500.0f64..500.0,
    ) {
        let f = LocalFrame::new(GeodeticPosition::new(lat, lon, h).unwrap());
        let back = f.to_enu(f.to_ecef(EnuPosition::new(e, n, u)));
        prop_assert!((back.east - e).abs() <= 1e-6);
        prop_assert!((back.north - n).abs() <= 1e-6);
        prop_assert!((back.up - u).abs() <= 1e-6);
    }

    #[test]
    fn geodetic_round_trip(lat in -89.9f64..89.9, lon in -179.9f64..179.9, h in -500.0f64..1e5) {
        let g = GeodeticPosition::new(lat, lon, h).unwrap();
        let p = geodetic_to_ecef(g);
        let back = ecef_to_geodetic(p);
        prop_assert!(geodetic_to_ecef(back).distance(p) <= 1e-6);
        prop_assert!((back.height - h).abs() <= 1e-6);
    }

    #[test]
    fn frame_preserves_distances(e1 in -1e4f64..1e4, n1 in -1e4f64..1e4, e2 in -1e4f64..1e4, n2 in -1e4f64..1e4) {
        let f = LocalFrame::new(GeodeticPosition::new(59.4, 17.9, 30.0).unwrap());
        let a = f.to_ecef(EnuPosition::new(e1, n1, 0.0));
        let b = f.to_ecef(EnuPosition::new(e2, n2, 0.0));
        prop_assert!((a.distance(b) - (e1 - e2).hypot(n1 - n2)).abs() <= 1e-6);
    }
}
