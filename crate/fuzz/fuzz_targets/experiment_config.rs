#![no_main]
use libfuzzer_sys::fuzz_target;
use mixcp_cli::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        if let Ok(resolved) = cfg.resolve() {
            // What goes into output headers must parse back.
            parse_config(&resolved.to_toml()).unwrap();
        }
    }
});
