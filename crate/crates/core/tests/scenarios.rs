use springslide::model::{ObjectPose, Vec2};
use springslide::simulator::{simulate, Drive, FingerMode, SimConfig};
use springslide::tasks::{trapezoid_hand, trapezoid_task};

#[test]
fn trapezoid_fingers_slide_while_object_stays_balanced() {
    let task = trapezoid_task();
    let hand = trapezoid_hand();
    let fingers = hand.finger_states(&task, &Vec2::new(0.05, 0.05), &hand.position).unwrap();
    let drive = |t: f64| {
        let p = hand.position + Vec2::new(0.0, -0.01 * t);
        Drive { hand: p, anchors: hand.anchors(&p) }
    };
    let object = |_t: f64| ObjectPose::default();
    let cfg = SimConfig { dt: 1e-3, sample_period: 0.01, duration: 3.0, ..Default::default() };
    let trace = simulate(&task, fingers, &drive, &object, &cfg).unwrap();
    let seq = trace.mode_sequence();
    println!("{seq:?}");
    for i in 0..2 {
        assert!(seq.contains(&(i, FingerMode::Sticking, FingerMode::Sliding)), "finger {i} never slides");
    }
    let last = trace.rows.last().unwrap();
    assert_eq!(last.modes, vec![FingerMode::Sliding; 2]);
    let min_margin = trace.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    println!("min margin {min_margin}, tips {:?}", last.fingertips_body);
    assert!(min_margin >= 0.0);
}
