#![no_main]

use dnls_core::snapshot::Snapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(snap) = Snapshot::decode(data) {
        let bytes = snap.encode();
        let again = Snapshot::decode(&bytes).expect("re-encoded snapshot decodes");
        assert_eq!(again.grid, snap.grid);
        assert_eq!(again.values.len(), snap.values.len());
        let _ = snap.into_field_on_own_grid();
    }
});
