#![cfg_attr(fuzzing, no_main)]

use squash::geometry::{format_pose_csv, parse_pose_csv};

// Formatting uses shortest round-trip floats, so a reparse is bit-identical.
fn check(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = parse_pose_csv(text) {
        let again = parse_pose_csv(&format_pose_csv(&rows)).expect("formatted poses parse");
        assert_eq!(again, rows);
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
