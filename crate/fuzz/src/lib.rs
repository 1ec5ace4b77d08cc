//! Shared driver for the fuzz targets.
//!
//! Built with `cargo fuzz run <target>` each binary is a libFuzzer target.
//! Built normally (`cargo run --bin <target> -- PATH...`) it replays every
//! file under the given paths, which is how the checked-in corpus is
//! exercised without a nightly toolchain.

use std::fs;
use std::path::Path;

fn visit(path: &Path, check: fn(&[u8]), count: &mut usize) {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
            .map(|e| e.expect("directory entry").path())
            .collect();
        entries.sort();
        for p in entries {
            visit(&p, check, count);
        }
    } else {
        let data = fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        check(&data);
        *count += 1;
    }
}

/// Runs `check` on every file below the paths given on the command line.
pub fn replay(check: fn(&[u8])) {
    let mut count = 0;
    for arg in std::env::args_os().skip(1) {
        visit(Path::new(&arg), check, &mut count);
    }
    eprintln!("replayed {count} inputs");
}
