#![no_main]

use dnls_cli::config::{parse_config, Command};
use libfuzzer_sys::fuzz_target;

const COMMANDS: [Command; 5] = [
    Command::GroundState,
    Command::ThresholdCurve,
    Command::Evolve,
    Command::Virial,
    Command::Verify,
];

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // A trailing line of `key=value` pairs exercises the override path.
    let (doc, overrides) = match text.rsplit_once("\n#") {
        Some((doc, tail)) => (doc, tail.split_whitespace().map(str::to_string).collect()),
        None => (text, Vec::new()),
    };
    if let Ok(cfg) = parse_config(doc, &overrides) {
        for c in COMMANDS {
            let _ = cfg.validate(c);
        }
        let json = serde_json::to_string(&cfg).expect("config serializes");
        parse_config(&json, &[]).expect("serialized config parses");
    }
});
