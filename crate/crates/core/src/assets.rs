//! Data files compiled into the binary so every scenario runs offline.

pub const NEXTGENIO_JSON: &str = include_str!("../fixtures/nextgenio.json");

pub const TARGETS_JSON: &str = include_str!("../data/targets.json");

pub const CALIBRATION_JSON: &str = include_str!("../data/calibration.json");

pub const PROFILES: [(&str, &str); 8] = [
    ("castep", include_str!("../data/profiles/castep.json")),
    ("snappyhexmesh", include_str!("../data/profiles/snappyhexmesh.json")),
    ("simplefoam", include_str!("../data/profiles/simplefoam.json")),
    ("io500", include_str!("../data/profiles/io500.json")),
    ("monc", include_str!("../data/profiles/monc.json")),
    ("fdb5", include_str!("../data/profiles/fdb5.json")),
    ("stream", include_str!("../data/profiles/stream.json")),
    ("synthetic", include_str!("../data/profiles/synthetic.json")),
];

pub const SCENARIOS: [(&str, &str); 7] = [
    ("table1", include_str!("../data/scenarios/table1.json")),
    ("stream", include_str!("../data/scenarios/stream.json")),
    ("monc", include_str!("../data/scenarios/monc.json")),
    ("snappy", include_str!("../data/scenarios/snappy.json")),
    ("io500", include_str!("../data/scenarios/io500.json")),
    ("workflow-demo", include_str!("../data/scenarios/workflow-demo.json")),
    ("powerloss-demo", include_str!("../data/scenarios/powerloss-demo.json")),
];
