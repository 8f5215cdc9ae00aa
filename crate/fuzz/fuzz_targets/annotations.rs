#![no_main]

use libfuzzer_sys::fuzz_target;
use renet_events::event_io::{format_annotations, parse_annotations};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ann) = parse_annotations(text) {
        let again = parse_annotations(&format_annotations(&ann)).expect("formatted annotations parse");
        assert_eq!(again, ann);
    }
});
