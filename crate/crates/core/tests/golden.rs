//! Frozen end-to-end run in mock mode. Regenerate the fixture with
//! `cargo test -p detective-core --test golden -- --ignored regenerate`.

use std::fs;
use std::path::{Path, PathBuf};

use detective::harness::bundle::{BundleHeader, FeatureBundle};
use detective::harness::pipeline::MockScript;
use detective::harness::{run_query, DetectiveConfig, ProviderMode, RunRequest};
use detective::providers::mock::{HashEmbedder, ObserverScenario, ScenarioEntry, ScriptedTimelineItem};
use detective::scoring::TimedText;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DIM: usize = 32;
const QUESTION: &str = "What color is the car the man drives away in?";
const OPTIONS: [&str; 4] = ["red", "blue", "green", "white"];
const SCENES: [(usize, usize, &str); 7] = [
    (0, 20, "a kitchen with a woman chopping vegetables on the counter"),
    (20, 40, "a busy city street with pedestrians and traffic lights"),
    (40, 55, "a man in a grey coat walks toward a parked red car"),
    (55, 70, "the man opens the door and drives away in the red car"),
    (70, 90, "children playing football in a green park"),
    (90, 105, "an office desk with a laptop and a coffee mug"),
    (105, 120, "a blue bus stops at a station in the rain"),
];
const ARTIFACTS: [&str; 3] = ["answer.json", "package.json", "trace.jsonl"];

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn request() -> RunRequest {
    RunRequest {
        bundle: fixture().join("bundle"),
        question: QUESTION.into(),
        options: OPTIONS.iter().map(|o| o.to_string()).collect(),
        config: DetectiveConfig::default(),
        mode: ProviderMode::Mock,
        mock_script: None,
    }
}

fn run_into(dir: &Path) -> String {
    let run = run_query(&request()).expect("golden run succeeds");
    run.write(dir).unwrap();
    run.answer
}

#[test]
fn golden_outputs_are_byte_identical() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_into(out.path()), "A");
    for name in ARTIFACTS {
        let expected = fs::read(fixture().join("expected").join(name)).unwrap();
        let actual = fs::read(out.path().join(name)).unwrap();
        assert!(expected == actual, "{name} differs from the frozen copy");
    }
}

#[test]
fn repeated_runs_match() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(a.path());
    run_into(b.path());
    for name in ARTIFACTS.iter().chain(&["beliefs.bin", "metrics.csv"]) {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

fn scene_frames() -> Vec<Vec<f64>> {
    let embedder = HashEmbedder::new(DIM);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut rows = Vec::new();
    for (start, end, text) in SCENES {
        let base = embedder.embed(text);
        for _ in start..end {
            let row: Vec<f64> = base.iter().map(|x| x + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            // round-trip through f32 so the stored rows are exactly unit within tolerance
            rows.push(row.iter().map(|x| ((x / n) as f32) as f64).collect());
        }
    }
    rows
}

fn entry(first: usize, last: usize, caption: &str, needs_more: bool, missing: &str) -> ScenarioEntry {
    ScenarioEntry {
        first_frame: first,
        last_frame: last,
        caption: caption.into(),
        needs_more,
        missing_keyword: missing.into(),
    }
}

#[test]
#[ignore]
fn regenerate() {
    let root = fixture();
    let bundle = FeatureBundle::from_rows(
        BundleHeader {
            video_id: "golden-street".into(),
            duration_s: 120.0,
            fps: 1.0,
            feature_dim: DIM,
        },
        scene_frames(),
        vec![TimedText {
            span: [56.0, 68.0],
            text: "see you later, I am taking the red car".into(),
        }],
        vec![TimedText {
            span: [105.0, 120.0],
            text: "ROUTE 42 CITY CENTER".into(),
        }],
    )
    .unwrap();
    let dir = root.join("bundle");
    bundle.write_dir(&dir).unwrap();
    let script = MockScript {
        planner: None,
        observer: ObserverScenario {
            entries: vec![
                entry(40, 54, "a man in a grey coat walks toward a red car", true, "driving"),
                entry(55, 69, "the man drives away in the red car", false, ""),
                entry(70, 89, "kids play football on green grass", false, ""),
                entry(105, 119, "a blue bus waits at a rainy station", false, ""),
            ],
            ..ObserverScenario::default()
        },
        timeline: SCENES
            .iter()
            .map(|&(s, e, text)| ScriptedTimelineItem {
                start: s as f64,
                end: e as f64,
                description: text.into(),
            })
            .collect(),
    };
    fs::write(dir.join("mock.json"), serde_json::to_string_pretty(&script).unwrap() + "\n").unwrap();
    let expected = root.join("expected");
    run_into(&expected);
    for extra in ["beliefs.bin", "metrics.csv"] {
        fs::remove_file(expected.join(extra)).unwrap();
    }
}
