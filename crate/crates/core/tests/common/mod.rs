#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HEADER: &str = "concert_id,season,order_index,composer_name,piece_title,birth_year,region";

const TITLES: [&str; 6] = [
    "Symphony No. 1",
    "Piano Concerto",
    "Festival Overture",
    "Suite",
    "Serenade",
    "Tone Poem",
];
const REGIONS: [&str; 5] = ["European", "Other", "NorthAmerican", "European", "Asian"];

/// A deterministic concert archive: `composers` composers, each concert
/// programming 2 to 5 of them in random order.
pub fn archive_csv(concerts: usize, composers: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from(HEADER);
    s.push('\n');
    for c in 0..concerts {
        let k = rng.random_range(2..=5.min(composers));
        let picked = sample(&mut rng, composers, k).into_vec();
        for (pos, who) in picked.into_iter().enumerate() {
            let title = TITLES[rng.random_range(0..TITLES.len())];
            writeln!(
                s,
                "c{c:03},{}-{},{},Composer {who:02},{title},{},{}",
                1990 + c % 20,
                91 + c % 20,
                pos + 1,
                1700 + 7 * who,
                REGIONS[who % REGIONS.len()]
            )
            .unwrap();
        }
    }
    s
}

pub fn ame() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ame"))
}

pub fn run(args: &[&str]) -> Output {
    let out = ame().args(args).env_remove("SOURCE_DATE_EPOCH").output().expect("spawn ame");
    out
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "ame {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub const SHORT_CONFIG: &str = "\
# short chains for tests
iterations = 300
burn_in = 100
thinning = 5
";

/// Full ingest, fit, gof, analyze pipeline into `root`.
pub fn pipeline(root: &Path, csv: &Path, config: &Path, seed: &str) {
    let data = root.join("data");
    let fit = root.join("fit");
    let gof = root.join("gof");
    let analysis = root.join("analysis");
    run_ok(&["ingest", path_str(csv), "--out-dir", path_str(&data), "--seed", seed]);
    run_ok(&[
        "fit",
        path_str(&data),
        "--config",
        path_str(config),
        "--seed",
        seed,
        "--variant",
        "AME",
        "--rank",
        "2",
        "--out-dir",
        path_str(&fit),
    ]);
    run_ok(&[
        "gof",
        "--chain",
        path_str(&fit),
        "--data",
        path_str(&data),
        "--out-dir",
        path_str(&gof),
    ]);
    run_ok(&[
        "analyze",
        path_str(&fit),
        "--clusters",
        "3",
        "--top-k",
        "5",
        "--out-dir",
        path_str(&analysis),
        "--seed",
        seed,
    ]);
}
