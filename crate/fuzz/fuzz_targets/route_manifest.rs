#![cfg_attr(fuzzing, no_main)]

use squash::scan_model::RouteManifest;

fn check(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = RouteManifest::parse(text) {
        assert!(!manifest.traversals.is_empty());
        let json = serde_json::to_string(&manifest).expect("serialize");
        assert_eq!(RouteManifest::parse(&json).expect("reparse"), manifest);
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
