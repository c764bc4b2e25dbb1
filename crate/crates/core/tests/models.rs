use std::path::PathBuf;

use pgan_core::ir::{load_model, load_model_dir, TensorShape};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn declared_params(path: &PathBuf) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("# parameters: "))
        .expect("model file declares its parameter count")
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn bundled_models_load_and_match_declared_parameters() {
    let dir = models_dir();
    for (file, out) in [
        ("dcgan.toml", (3, 32, 32)),
        ("cgan.toml", (1, 28, 28)),
        ("artgan.toml", (3, 32, 32)),
        ("cyclegan.toml", (3, 64, 64)),
    ] {
        let path = dir.join(file);
        let g = load_model(&path).unwrap();
        assert_eq!(g.param_count(), declared_params(&path), "{file}");
        assert_eq!(g.output_shape(), TensorShape::new(out.0, out.1, out.2).unwrap(), "{file}");
        assert!(g.has_transposed_conv(), "{file}");
    }
}

#[test]
fn model_directory_is_sorted_by_file_name() {
    let names: Vec<String> = load_model_dir(models_dir())
        .unwrap()
        .iter()
        .map(|g| g.name().to_string())
        .collect();
    assert_eq!(names, ["artgan-like", "cgan-like", "cyclegan-like", "dcgan-like"]);
}

#[test]
fn round_trip_through_toml() {
    for g in load_model_dir(models_dir()).unwrap() {
        let back = pgan_core::ir::ModelGraph::from_toml_str(&g.to_toml_string(), "round trip").unwrap();
        assert_eq!(back, g);
    }
}
