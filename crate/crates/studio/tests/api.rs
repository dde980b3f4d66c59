use std::fs;
use std::net::SocketAddr;
use std::path::Path;

use serde_json::{json, Value};
use tfq::gray::GrayImage;
use tfq::nn::{Label, PairSet};
use tfq_studio::{RunningStudio, StudioConfig};

fn corpus(dir: &Path, n: usize) {
    for i in 0..n {
        GrayImage::filled(4 + i % 3, 5, (i as f32 / n as f32).min(1.0))
            .save(dir.join(format!("img{i:03}.png")))
            .unwrap();
    }
}

fn start(images: &Path, out: &Path, seed: u64) -> RunningStudio {
    let cfg = StudioConfig {
        images: images.to_path_buf(),
        out: out.to_path_buf(),
        seed: Some(seed),
    };
    RunningStudio::start(SocketAddr::from(([127, 0, 0, 1], 0)), &cfg).unwrap()
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn get(s: &RunningStudio, path: &str) -> (u16, Value) {
    let mut r = agent().get(&s.url(path)).call().unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

fn post(s: &RunningStudio, path: &str, body: &str) -> (u16, Value) {
    let mut r = agent()
        .post(&s.url(path))
        .header("Content-Type", "application/json")
        .send(body)
        .unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

fn annotate(s: &RunningStudio, r: &str, a: &str, b: &str) -> u16 {
    let body = json!({"referenceId": r, "similarId": a, "dissimilarId": b, "timestamp": "2024-01-01T00:00:00Z"});
    post(s, "/api/pairs", &body.to_string()).0
}

#[test]
fn listing_is_sorted_and_skips_non_images() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    fs::create_dir_all(images.join("sub")).unwrap();
    corpus(&images, 4);
    GrayImage::filled(2, 2, 0.5).save(images.join("sub/inner.png")).unwrap();
    fs::write(images.join("notes.txt"), "hello").unwrap();
    fs::write(images.join("broken.png"), "not a png").unwrap();
    let s = start(&images, &dir.path().join("pairs.jsonl"), 1);
    let (status, list) = get(&s, "/api/images");
    assert_eq!(status, 200);
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["img000.png", "img001.png", "img002.png", "img003.png", "sub/inner.png"]);
    assert_eq!(list[1]["width"], 5);
    assert_eq!(list[1]["height"], 5);
    assert_eq!(list[4]["relpath"], "sub/inner.png");
}

#[test]
fn empty_and_unreadable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let s = start(&empty, &dir.path().join("a.jsonl"), 1);
    assert_eq!(get(&s, "/api/images"), (200, json!([])));
    assert_eq!(get(&s, "/api/session").0, 409);
    drop(s);
    let s = start(&dir.path().join("missing"), &dir.path().join("b.jsonl"), 1);
    assert_eq!(get(&s, "/api/images").0, 500);
}

#[test]
fn sessions_exclude_reference_and_are_seedable() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 3);
    let out = tempfile::tempdir().unwrap();
    let s = start(dir.path(), &out.path().join("p.jsonl"), 42);
    let (status, first) = get(&s, "/api/session");
    assert_eq!(status, 200);
    let grid = first["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 2);
    assert!(grid.iter().all(|e| e["id"] != first["reference"]["id"]));

    let again = start(dir.path(), &out.path().join("q.jsonl"), 42);
    assert_eq!(get(&again, "/api/session").1, first);
}

#[test]
fn grid_is_a_permutation() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 9);
    let out = tempfile::tempdir().unwrap();
    let s = start(dir.path(), &out.path().join("p.jsonl"), 3);
    for _ in 0..20 {
        let (_, session) = get(&s, "/api/session");
        let mut ids: Vec<String> = session["grid"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["id"].as_str().unwrap().to_string())
            .collect();
        ids.push(session["reference"]["id"].as_str().unwrap().to_string());
        ids.sort();
        let expected: Vec<String> = (0..9).map(|i| format!("img{i:03}.png")).collect();
        assert_eq!(ids, expected);
    }
}

#[test]
fn annotations_become_two_pairs() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 4);
    let out = tempfile::tempdir().unwrap();
    let file = out.path().join("pairs.jsonl");
    let s = start(dir.path(), &file, 1);
    assert_eq!(annotate(&s, "img000.png", "img001.png", "img002.png"), 201);
    let (status, counts) = post(&s, "/api/submit", "");
    assert_eq!(status, 200);
    assert_eq!(counts, json!({"pairs": 2, "total": 2}));
    let set = PairSet::load(&file).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(
        (set.pairs[0].a.as_str(), set.pairs[0].b.as_str(), set.pairs[0].label),
        ("img000.png", "img001.png", Label::Similar)
    );
    assert_eq!(
        (set.pairs[1].a.as_str(), set.pairs[1].b.as_str(), set.pairs[1].label),
        ("img000.png", "img002.png", Label::Dissimilar)
    );
    // Submitting twice changes nothing.
    assert_eq!(post(&s, "/api/submit", "").1, counts);
}

#[test]
fn invalid_annotations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 4);
    let out = tempfile::tempdir().unwrap();
    let file = out.path().join("pairs.jsonl");
    let s = start(dir.path(), &file, 1);
    assert_eq!(annotate(&s, "img000.png", "img000.png", "img002.png"), 400);
    assert_eq!(annotate(&s, "img000.png", "img001.png", "img001.png"), 400);
    assert_eq!(annotate(&s, "img000.png", "img001.png", "nope.png"), 400);
    assert_eq!(annotate(&s, "../etc/passwd", "img001.png", "img002.png"), 400);
    assert_eq!(post(&s, "/api/pairs", "{not json").0, 400);
    assert_eq!(post(&s, "/api/pairs", r#"{"referenceId":"img000.png"}"#).0, 400);
    assert_eq!(post(&s, "/api/submit", "").1, json!({"pairs": 0, "total": 0}));
    assert_eq!(fs::read_to_string(&file).unwrap(), "");
}

#[test]
fn restart_keeps_earlier_pairs() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 4);
    let out = tempfile::tempdir().unwrap();
    let file = out.path().join("pairs.jsonl");
    let s = start(dir.path(), &file, 1);
    for _ in 0..3 {
        assert_eq!(annotate(&s, "img001.png", "img002.png", "img003.png"), 201);
    }
    s.stop().unwrap();
    let before = fs::read_to_string(&file).unwrap();
    let s = start(dir.path(), &file, 1);
    assert_eq!(annotate(&s, "img003.png", "img002.png", "img001.png"), 201);
    assert_eq!(post(&s, "/api/submit", "").1, json!({"pairs": 2, "total": 8}));
    assert!(fs::read_to_string(&file).unwrap().starts_with(&before));
}

#[test]
fn images_are_served_with_cache_headers() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 3);
    fs::write(dir.path().join("secret.txt"), "x").unwrap();
    let out = tempfile::tempdir().unwrap();
    let s = start(dir.path(), &out.path().join("p.jsonl"), 1);
    let mut r = agent().get(&s.url("/img/img001.png")).call().unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.headers()["content-type"], "image/png");
    assert!(r.headers().contains_key("cache-control"));
    let bytes = r.body_mut().read_to_vec().unwrap();
    assert_eq!(bytes, fs::read(dir.path().join("img001.png")).unwrap());
    for path in ["/img/secret.txt", "/img/missing.png", "/img/..%2Fp.jsonl"] {
        assert_eq!(agent().get(&s.url(path)).call().unwrap().status().as_u16(), 404, "{path}");
    }
}
