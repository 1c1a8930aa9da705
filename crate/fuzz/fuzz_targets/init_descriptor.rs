#![no_main]

use dnls_cli::init::InitDescriptor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = serde_json::from_slice::<InitDescriptor>(data) {
        let _ = d.validate("init");
        let _ = d.needs_grid();
        let _ = d.inputs();
        let json = serde_json::to_vec(&d).expect("descriptor serializes");
        let back: InitDescriptor = serde_json::from_slice(&json).expect("serialized descriptor parses");
        assert_eq!(back.needs_grid(), d.needs_grid());
    }
});
