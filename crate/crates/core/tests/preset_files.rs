use thzloc_core::scenario::PRESET_NAMES;
use thzloc_core::{parse_config, preset};

#[test]
fn shipped_preset_files_match_built_in_presets() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in PRESET_NAMES {
        let path = dir.join(format!("{name}.toml"));
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let parsed = parse_config(&text).unwrap();
        let built_in = preset(name).unwrap();
        assert_eq!(parsed, built_in, "{name}");
        assert_eq!(parsed.hash(), built_in.hash(), "{name}");
        assert_eq!(text, built_in.to_toml(), "{name}.toml is not canonical");
    }
}
