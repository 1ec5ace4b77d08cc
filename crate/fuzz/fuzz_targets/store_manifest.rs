#![cfg_attr(fuzzing, no_main)]

use squash::squash_store::StoreManifest;

fn check(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = StoreManifest::parse(text) {
        let json = serde_json::to_string(&manifest).expect("serialize");
        assert_eq!(StoreManifest::parse(&json).expect("reparse"), manifest);
        manifest.fingerprint().expect("validated fingerprint");
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    squash_fuzz::replay(check);
}
