#![no_main]

use libfuzzer_sys::fuzz_target;
use renet_events::event_io::{format_timeline, parse_timeline};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(frames) = parse_timeline(text) {
        let again = parse_timeline(&format_timeline(&frames)).expect("formatted timeline parses");
        assert_eq!(again, frames);
    }
});
