#![no_main]
use libfuzzer_sys::fuzz_target;
use mixcp::ingest::{linear_returns, parse_price_csv, ColumnSpec, HeaderMode};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for header in [HeaderMode::Auto, HeaderMode::Present, HeaderMode::Absent] {
        let spec = ColumnSpec { header, ..ColumnSpec::default() };
        if let Ok(series) = parse_price_csv(text, &spec) {
            // Accepted prices are positive and finite, so returns always exist.
            if series.len() >= 2 {
                linear_returns(&series).unwrap();
            }
        }
    }
});
