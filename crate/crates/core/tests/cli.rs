use std::fs;
use std::path::Path;
use std::time::Instant;

use master_core::cli::{
    cmd_evaluate, cmd_explain, cmd_generate, cmd_train, parse_date, prepare, CliError, RunConfig, CHECKPOINT_FILE,
    DAILY_FILE, HISTORY_FILE, METRICS_FILE,
};
use master_core::data::load_csv;
use master_core::explain::{read_matrix_csv, read_pgm};
use master_core::model::{Checkpoint, ModelParams};

fn tiny(root: &Path) -> RunConfig {
    let text = format!(
        r#"
seed = 4
[data]
stocks = "{d}/data/stocks.csv"
index = "{d}/data/index.csv"
truth = "{d}/data/truth.csv"
[synthetic]
n_stocks = 8
n_days = 120
[windows]
horizon = 2
market_intervals = [5, 10, 20]
[model]
d_model = 16
intra_heads = 2
inter_heads = 2
[train]
lr = 1e-3
max_epochs = 4
[backtest]
top_k = 3
[output]
dir = "{d}/runs"
"#,
        d = root.display()
    );
    RunConfig::from_toml_str(&text).unwrap()
}

#[test]
fn generate_default_market_row_count_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let out = cmd_generate(&cfg, Some(dir.path())).unwrap();
    let text = fs::read_to_string(&out.stocks).unwrap();
    assert_eq!(text.lines().count() - 1, 30 * 600);
    let (panel, index) = load_csv(&out.stocks, &out.index, cfg.data.missing).unwrap();
    assert_eq!((panel.n_stocks(), panel.n_dates()), (30, 600));
    assert_eq!(index.n_indices(), 3);
    let echoed = RunConfig::load(&out.config).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny(a.path());
    let ga = cmd_generate(&cfg, Some(a.path())).unwrap();
    let gb = cmd_generate(&cfg, Some(b.path())).unwrap();
    for (x, y) in [(&ga.stocks, &gb.stocks), (&ga.index, &gb.index), (&ga.truth, &gb.truth)] {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn train_evaluate_explain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_generate(&cfg, None).unwrap();

    let start = Instant::now();
    let run = cmd_train(&cfg).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    for f in [CHECKPOINT_FILE, HISTORY_FILE, "config.toml"] {
        assert!(run.dir.join(f).is_file(), "{f}");
    }
    assert_eq!(RunConfig::load(&run.dir.join("config.toml")).unwrap(), cfg);

    let rerun = cmd_train(&cfg).unwrap();
    assert_ne!(rerun.dir, run.dir);
    for f in [CHECKPOINT_FILE, HISTORY_FILE] {
        assert_eq!(fs::read(run.dir.join(f)).unwrap(), fs::read(rerun.dir.join(f)).unwrap(), "{f}");
    }

    let ckpt = run.dir.join(CHECKPOINT_FILE);
    let eval = cmd_evaluate(&cfg, &ckpt).unwrap();
    let metrics = fs::read_to_string(eval.dir.join(METRICS_FILE)).unwrap();
    let names: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["IC", "ICIR", "RankIC", "RankICIR", "AR", "IR"]);
    let daily = fs::read_to_string(eval.dir.join(DAILY_FILE)).unwrap();
    assert_eq!(daily.lines().count() - 1, eval.report.dates.len());
    let mut files: Vec<String> = fs::read_dir(&eval.dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["config.toml", DAILY_FILE, METRICS_FILE]);

    let data = prepare(&cfg).unwrap();
    let date = data.windows.test[2].prediction_date;
    let u = data.panel.stocks()[3].clone();
    let ex = cmd_explain(&cfg, &ckpt, Some(date), &u, &u).unwrap();
    let i_map = &ex.maps[0].1.matrix;
    let s2_path = |t: usize| ex.dir.join(format!("explain_S2_t{t}.csv"));
    for i in 0..i_map.rows {
        let s2 = read_matrix_csv(&s2_path(i)).unwrap();
        let row_sum: f64 = i_map.row(i).iter().sum();
        assert!((row_sum - s2.at(3, 3)).abs() < 1e-9);
    }
    let back = read_matrix_csv(&ex.dir.join(format!("explain_I_{u}_{u}.csv"))).unwrap();
    assert_eq!(&back, i_map);
    let (w, h, levels) = read_pgm(&ex.dir.join(format!("explain_I_{u}_{u}.pgm"))).unwrap();
    assert_eq!((w, h, levels.len()), (i_map.cols, i_map.rows, i_map.values.len()));

    let all = cmd_explain(&cfg, &ckpt, None, &u, &data.panel.stocks()[0]).unwrap();
    assert_eq!(all.maps.len(), data.windows.test.len());
    assert_eq!(all.bands.len(), 2 * (cfg.windows.lookback - 2) + 1);
}

#[test]
fn ablation_is_recorded_in_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.max_epochs = 1;
    cmd_generate(&cfg, None).unwrap();
    cfg.apply(&master_core::cli::Overrides { ablate: Some(master_core::cli::Ablation::InterStock), ..Default::default() });
    let run = cmd_train(&cfg).unwrap();
    let ckpt = Checkpoint::load(&run.dir.join(CHECKPOINT_FILE)).unwrap();
    assert!(ckpt.config.disable_inter_stock);
    assert!(!ckpt.config.disable_gating);
}

#[test]
fn zero_model_has_no_information() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_generate(&cfg, None).unwrap();
    let data = prepare(&cfg).unwrap();
    let zero = Checkpoint { params: ModelParams::zeros(&data.model).unwrap(), config: data.model.clone() };
    let path = dir.path().join("zero.bin");
    zero.save(&path).unwrap();
    let eval = cmd_evaluate(&cfg, &path).unwrap();
    assert!(eval.report.ranking.ic.abs() < 0.1);
}

#[test]
fn mismatches_and_bad_arguments_are_descriptive() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.max_epochs = 1;
    cmd_generate(&cfg, None).unwrap();
    let run = cmd_train(&cfg).unwrap();
    let ckpt = run.dir.join(CHECKPOINT_FILE);

    let mut wider = cfg.clone();
    wider.windows.market_intervals = vec![5, 10];
    let err = cmd_evaluate(&wider, &ckpt).unwrap_err();
    assert!(matches!(err, CliError::Incompatible(_)), "{err}");
    assert!(err.to_string().contains("market status width"));

    let data = prepare(&cfg).unwrap();
    let s = data.panel.stocks()[0].clone();
    let train_date = data.windows.train[0].prediction_date;
    let err = cmd_explain(&cfg, &ckpt, Some(train_date), &s, &s).unwrap_err();
    assert!(err.to_string().contains("not a test prediction date"), "{err}");
    let err = cmd_explain(&cfg, &ckpt, None, &s, "NOPE").unwrap_err();
    assert!(err.to_string().contains("NOPE"), "{err}");

    let mut missing = cfg.clone();
    missing.data.stocks = dir.path().join("absent.csv");
    assert!(matches!(cmd_train(&missing).unwrap_err(), CliError::MissingInput(_)));
    assert!(parse_date("2015-13-01").is_err());
}

#[test]
fn binary_exit_status_reflects_outcome() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_master");
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(bin).args(["generate", "--out"]).arg(dir.path()).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("stocks.csv").is_file());

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[model]\nwidth = 3\n").unwrap();
    let bad = Command::new(bin).arg("--config").arg(&bad_cfg).arg("train").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown field"));
}
