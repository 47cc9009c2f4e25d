mod common;

use bapmsim::calibrate::{goodness_of_fit, CalibrationParams};
use bapmsim::scenarios::{bundled_calibration, bundled_targets, evaluate};

#[test]
fn bundled_calibration_meets_every_target() {
    let base = common::cluster();
    let calib = bundled_calibration();
    calib.validate().unwrap();
    let targets = bundled_targets();
    let eval = |c: &CalibrationParams, t: &[_]| evaluate(&base, 42, c, t);
    let residuals = goodness_of_fit(&calib, &targets.targets, &eval).unwrap();
    let failing: Vec<_> = residuals.iter().filter(|r| !r.pass).map(|r| (&r.id, r.rel_error)).collect();
    assert!(failing.is_empty(), "{failing:?}");
}

#[test]
fn bundled_calibration_honours_pins() {
    let calib = bundled_calibration();
    for (name, v) in bundled_targets().pinned {
        assert_eq!(calib.get(&name).unwrap(), v, "{name}");
    }
}

#[test]
fn calibration_round_trips_through_json() {
    let calib = bundled_calibration();
    let back = CalibrationParams::from_json(&calib.to_json()).unwrap();
    assert_eq!(back, calib);
}
