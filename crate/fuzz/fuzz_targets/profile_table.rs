#![no_main]
use libfuzzer_sys::fuzz_target;
use mixcp::mixing::parse_profile_table;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(profile) = parse_profile_table(text) {
        let table = profile.tabulate(64);
        assert!(table.windows(2).all(|w| w[1] <= w[0]));
        assert!(table.iter().all(|b| (0.0..=1.0).contains(b)));
    }
});
