use std::path::PathBuf;

use springslide::ident::IdentParams;
use springslide::io::{IdentConfig, Motion, TaskFile, TaskRef, WrenchInput};
use springslide::planner::PlanSpec;
use springslide::tasks::{regrasp_hand, regrasp_spec, regrasp_task, trapezoid_hand, trapezoid_task, REGRASP_STIFFNESS};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_tasks_match_the_builtin_ones() {
    let regrasp = TaskFile::load(&data("regrasp_task.json")).unwrap();
    assert_eq!(regrasp.task, regrasp_task());
    assert_eq!(regrasp.hand, Some(regrasp_hand()));
    let trapezoid = TaskFile::load(&data("trapezoid_task.json")).unwrap();
    assert_eq!(trapezoid.task, trapezoid_task());
    assert_eq!(trapezoid.hand, Some(trapezoid_hand()));
    let spec: PlanSpec = springslide::io::read_json(&data("regrasp_spec.json")).unwrap();
    assert_eq!(spec, regrasp_spec());
}

#[test]
fn bundled_configs_parse() {
    assert!(matches!(Motion::load(&data("trapezoid_motion.json")).unwrap(), Motion::Hand { .. }));
    let w: WrenchInput = springslide::io::read_json(&data("regrasp_contacts.json")).unwrap();
    assert_eq!(w.scaled(&regrasp_task()).unwrap().len(), 3);
    let cfg: IdentConfig = springslide::io::read_json(&data("ident_config.json")).unwrap();
    assert!(matches!(cfg.task, TaskRef::Path(_)));
    let synthetic = cfg.synthetic.unwrap();
    assert_eq!(synthetic.params, IdentParams::diagonal(0.2502, REGRASP_STIFFNESS));
    assert_eq!(synthetic.drag.duration / synthetic.drag.sample_period, 5000.0);
}
