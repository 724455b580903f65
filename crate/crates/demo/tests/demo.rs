use codesign_demo::{bounds_json, design, front, mission, MissionView};

#[test]
fn design_at_upper_bounds_reports_talents() {
    let b: serde_json::Value = serde_json::from_str(&bounds_json()).unwrap();
    let upper: Vec<f64> = serde_json::from_value(b["upper"].clone()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&design(&upper).unwrap()).unwrap();
    assert!(v["talents"]["flight_range"].as_f64().unwrap() > 0.0);
    assert_eq!(v["constraints"].as_array().unwrap().len(), 3);
    assert!(design(&[1.0, 2.0]).is_err());
}

#[test]
fn small_front_has_points_and_surface() {
    let v: serde_json::Value = serde_json::from_str(&front(40, 10, 1).unwrap()).unwrap();
    assert!(v["points"].as_array().unwrap().len() > 10);
    assert_eq!(v["surface"].as_array().unwrap().len(), 121);
    assert!(front(3, 10, 1).is_err());
}

#[test]
fn mission_legs_are_time_ordered_per_robot() {
    let m: MissionView = serde_json::from_str(&mission(12, 3, [6.0, 10.0, 3.0], "edf", 4).unwrap()).unwrap();
    assert_eq!(m.tasks.len(), 12);
    assert!(m.completed <= 12);
    for r in 0..3 {
        let legs: Vec<_> = m.legs.iter().filter(|l| l.robot == r).collect();
        for w in legs.windows(2) {
            assert!(w[1].depart >= w[0].arrive - 1e-9);
            assert_eq!(w[1].from, w[0].to);
        }
    }
    assert!(mission(5, 1, [6.0, 10.0, 3.0], "teleport", 0).is_err());
    assert!(mission(0, 1, [6.0, 10.0, 3.0], "edf", 0).is_err());
}
