#![no_main]

use libfuzzer_sys::fuzz_target;
use renet_cli::ModelConfig;
use renet_events::SceneConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ModelConfig::from_kv_text(text) {
        let again = ModelConfig::from_kv_text(&cfg.to_kv_text()).expect("written config parses");
        assert_eq!(again.to_kv_text(), cfg.to_kv_text());
    }
    let _ = SceneConfig::from_kv_text(text);
});
