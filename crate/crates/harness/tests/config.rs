use std::path::Path;

use rrr_harness::{ExperimentConfig, HarnessError};

const MINIMAL: &str = r#"
name = "t"
[dataset]
kind = "toy_color"
seed = 1
[train]
seed = 0
"#;

fn field_of(e: HarnessError) -> String {
    match e {
        HarnessError::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_config_validates() {
    let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.roster().len(), 1);
    assert_eq!(cfg.dataset.sizes(), (10_000, 1_000));
}

#[test]
fn missing_dataset_seed_names_the_field() {
    let cfg = ExperimentConfig::parse(&MINIMAL.replace("seed = 1\n", "")).unwrap();
    let e = cfg.validate().unwrap_err();
    assert!(e.to_string().contains("dataset.seed"), "{e}");
    assert_eq!(field_of(e), "dataset.seed");
}

#[test]
fn missing_train_seed_names_the_field() {
    let cfg = ExperimentConfig::parse(&MINIMAL.replace("[train]\nseed = 0\n", "")).unwrap();
    assert_eq!(field_of(cfg.validate().unwrap_err()), "train.seed");
}

#[test]
fn parse_errors_carry_a_location() {
    let e = ExperimentConfig::parse(&format!("{MINIMAL}bogus = 3\n")).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("bogus"), "{msg}");
    assert!(msg.contains("line"), "{msg}");

    let e = ExperimentConfig::parse(&MINIMAL.replace("toy_color", "tiny_colour")).unwrap_err();
    assert!(e.to_string().contains("tiny_colour"), "{e}");
}

#[test]
fn roster_errors_point_at_the_entry() {
    let dup = format!("{MINIMAL}[[models]]\nname = \"a\"\n[[models]]\nname = \"a\"\n");
    assert_eq!(field_of(ExperimentConfig::parse(&dup).unwrap().validate().unwrap_err()), "models[1].name");

    let bad = format!("{MINIMAL}[[models]]\nname = \"a/b\"\n");
    assert_eq!(field_of(ExperimentConfig::parse(&bad).unwrap().validate().unwrap_err()), "models[0].name");

    let steps = format!("{MINIMAL}[[models]]\nname = \"a\"\nsteps = 0\n");
    assert_eq!(field_of(ExperimentConfig::parse(&steps).unwrap().validate().unwrap_err()), "models[0].steps");
}

#[test]
fn section_errors() {
    let cases = [
        ("[[attacks]]\nkind = \"tgsm\"\nepsilon = 0.1\n", "attacks[0]"),
        ("[[attacks]]\nkind = \"fgsm\"\nepsilon = -0.1\n", "attacks[0]"),
        ("[sweep]\ngrid = []\n", "sweep.grid"),
        ("[fae]\ncutoff = 0.0\n", "fae.cutoff"),
        ("[fae]\nmode = \"simultaneous\"\nmodels = 1\n", "fae.models"),
        ("[efficiency]\nvariants = []\nsizes = [10]\n", "efficiency.variants"),
        ("[efficiency]\nvariants = [\"none\"]\nsizes = [20000]\n", "efficiency.sizes"),
        ("[dump]\nrows = [5000]\n", "dump.rows"),
    ];
    for (extra, field) in cases {
        let cfg = ExperimentConfig::parse(&format!("{MINIMAL}{extra}")).unwrap();
        assert_eq!(field_of(cfg.validate().unwrap_err()), field, "{extra}");
    }
}

#[test]
fn dataset_errors() {
    let decoy = MINIMAL.replace("seed = 1\n", "seed = 1\ndecoy = true\n");
    assert_eq!(field_of(ExperimentConfig::parse(&decoy).unwrap().validate().unwrap_err()), "dataset.decoy");
    let odd = MINIMAL
        .replace("toy_color", "quadrant2d")
        .replace("seed = 1\n", "seed = 1\ntrain_size = 7\n");
    assert_eq!(field_of(ExperimentConfig::parse(&odd).unwrap().validate().unwrap_err()), "dataset.train_size");
    let dump = MINIMAL.replace("toy_color", "quadrant2d") + "[dump]\nrows = [0]\n";
    assert_eq!(field_of(ExperimentConfig::parse(&dump).unwrap().validate().unwrap_err()), "dump");
}

#[test]
fn roster_overrides_apply() {
    let text = format!(
        "{MINIMAL}[[models]]\nname = \"a\"\n[[models]]\nname = \"b\"\ndefense = \"grad_reg\"\nsteps = 7\npenalty = {{ kind = \"doubleback\", lambda = 3.0 }}\n"
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    cfg.validate().unwrap();
    let roster = cfg.roster();
    assert_eq!(roster[0].1, cfg.train);
    assert_eq!(roster[1].1.steps, 7);
    assert_eq!(roster[1].1.penalty.lambda1, 3.0);
    assert_eq!(roster[1].1.penalty.lambda2, 1e-4);
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
