use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use surgq_core::corpus::{write_synthetic_project, NewFrame, Project, SyntheticSpec};
use surgq_core::geometry::{ComponentPolygon, Point, PolygonScene};
use surgq_core::quiz::{
    Anchor, HighlightStyle, McqOption, McqQuestion, PathQuestion, Question, Quiz, RegionFeedback,
    RichText, QUIZ_SCHEMA,
};
use surgq_core::{ClassId, Exec, FrameRef};
use surgq_service::api::{FrameSummary, InpaintResponse, RebuildResponse};
use surgq_service::{router, AppState, ErrorBody};

const GOLDEN: &str = "tests/fixtures/polygons_frame0.json";

fn spec(frames: usize) -> SyntheticSpec {
    SyntheticSpec {
        width: 160,
        height: 90,
        ..SyntheticSpec::new(frames, 0.2, 5)
    }
}

fn project(dir: &Path, frames: usize) -> PathBuf {
    let root = dir.join("proj");
    write_synthetic_project(&root, &spec(frames), Exec::default()).unwrap();
    root
}

fn app(root: &Path, inpaint_url: Option<&str>) -> Router {
    router(AppState::open(root, inpaint_url).unwrap().shared())
}

struct Reply {
    status: StatusCode,
    content_type: String,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }

    fn error(&self) -> ErrorBody {
        serde_json::from_slice(&self.bytes).unwrap()
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<String>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let resp = app
        .clone()
        .oneshot(req.body(body.map(Body::from).unwrap_or_default()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        bytes,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, "GET", uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    send(app, "POST", uri, Some(body.to_string())).await
}

fn quiz(id: &str, frame: &FrameRef, section: u32) -> Quiz {
    let t = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
    Quiz {
        schema: QUIZ_SCHEMA.into(),
        id: id.into(),
        title: format!("Quiz {id}"),
        author: "tester".into(),
        created: t,
        modified: t,
        source_videos: vec![frame.video_id.clone()],
        questions: vec![
            Question::Mcq(McqQuestion {
                stem: RichText {
                    text: "Which structure is highlighted?".into(),
                    images: vec![],
                },
                options: vec![
                    McqOption {
                        text: Some("Liver".into()),
                        image: None,
                        feedback: vec![RegionFeedback {
                            frame: frame.clone(),
                            anchor: Anchor::Section { id: section },
                            text: "This one.".into(),
                            style: HighlightStyle::Fill,
                        }],
                    },
                    McqOption {
                        text: Some("Fat".into()),
                        ..McqOption::default()
                    },
                ],
                correct: BTreeSet::from([0]),
            }),
            Question::Path(PathQuestion {
                frame: frame.clone(),
                target_section: section,
                prompt: "Trace the edge".into(),
                author_path: vec![Point::new(10.0, 10.0), Point::new(100.0, 60.0)],
                tolerance: 30.0,
            }),
        ],
    }
}

#[tokio::test]
async fn frames_listing_and_media() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);

    let r = get(&app, "/frames").await;
    assert_eq!(r.status, StatusCode::OK);
    let frames: Vec<FrameSummary> = serde_json::from_value(r.json()).unwrap();
    assert_eq!(frames.len(), 3);
    for f in &frames {
        assert_eq!(f.id, f.frame.key());
        assert_eq!((f.width, f.height), (160, 90));
        assert!(f.fused);
    }

    let img = get(&app, &frames[0].image_url).await;
    assert_eq!(img.status, StatusCode::OK);
    assert_eq!(img.content_type, "image/png");
    assert_eq!(image::load_from_memory(&img.bytes).unwrap().width(), 160);

    let thumb = get(&app, &frames[0].thumb_url).await;
    assert_eq!(thumb.status, StatusCode::OK);
    assert_eq!(thumb.content_type, "image/jpeg");

    let hl = get(&app, &format!("/frames/{}/sections/0/highlight?style=arrow", frames[0].id)).await;
    assert_eq!(hl.status, StatusCode::OK);
    assert_eq!(hl.content_type, "image/png");

    assert_eq!(get(&app, "/keyframes").await.status, StatusCode::OK);
}

#[tokio::test]
async fn unknown_things_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);
    let id = FrameRef::new("synth", 0, 0).key();

    for uri in [
        "/frames/nope_1_0/image".to_string(),
        "/frames/nope_1_0/polygons".to_string(),
        format!("/frames/{id}/sections/999/highlight"),
        "/quizzes/missing".to_string(),
        "/assets/deadbeef.png".to_string(),
        "/assets/..%2Fmanifest.json".to_string(),
    ] {
        let r = get(&app, &uri).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.error().error, "not_found");
    }
}

#[tokio::test]
async fn polygons_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);
    let id = Project::load(&root).unwrap().frames()[0].frame.key();
    let got = get(&app, &format!("/frames/{id}/polygons")).await.json();

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("SURGQ_UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(&golden).unwrap()).unwrap();
    assert_eq!(got, want);
    assert!(!got["polygons"].as_array().unwrap().is_empty());
}

fn scene_json(class: u8) -> Value {
    json!({
        "width": 160,
        "height": 90,
        "polygons": [{ "class": class, "vertices": [[0, 0], [80, 0], [80, 45], [0, 45]] }]
    })
}

#[tokio::test]
async fn search_validation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);

    let r = post(&app, "/search", json!({ "scene": scene_json(2), "k": 2, "min_gap_ms": 0 })).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["hits"].as_array().unwrap().len(), 2);

    let cases = [
        (json!({ "scene": scene_json(12) }), "scene.polygons[0].class"),
        (json!({ "scene": scene_json(2), "k": -1 }), "k"),
        (json!({ "scene": scene_json(2), "k": 0 }), "k"),
        (json!({ "scene": { "width": 160, "height": 90, "polygons": [{ "class": 2, "vertices": [[0, 0], [1, 1]] }] } }), "scene.polygons[0]"),
        (json!({ "scene": { "width": 320, "height": 180, "polygons": [] } }), "scene.width"),
        (json!({ "k": 3 }), "scene"),
    ];
    for (body, path) in cases {
        let r = post(&app, "/search", body.clone()).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body}");
        let err = r.error();
        assert!(err.path.as_deref().unwrap_or("").starts_with(path), "{body}: {:?}", err.path);
    }

    let r = send(&app, "POST", "/search", Some("{not json".into())).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stale_index_conflicts_until_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let mut p = Project::load(&root).unwrap();
    let truth = p.read_truth(&p.frames()[0].frame.clone()).unwrap().unwrap();
    let sections = surgq_core::scene::label_components(&truth).unwrap();
    p.add_frames(
        Exec::default(),
        vec![NewFrame {
            frame: FrameRef::new("extra", 0, 0),
            image: None,
            class_map: truth.clone(),
            section_mask: sections,
            truth: Some(truth),
        }],
    )
    .unwrap();
    p.fuse_all(Exec::default()).unwrap();
    p.save().unwrap();
    assert!(p.index_is_stale());

    let app = app(&root, None);
    let body = json!({ "scene": scene_json(2) });
    let r = post(&app, "/search", body.clone()).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error().error, "stale_index");

    let r = post(&app, "/index/rebuild", json!({})).await;
    assert_eq!(r.status, StatusCode::OK);
    let rebuilt: RebuildResponse = serde_json::from_value(r.json()).unwrap();
    assert_eq!((rebuilt.frames, rebuilt.grid_w, rebuilt.grid_h), (4, 80, 45));

    assert_eq!(post(&app, "/search", body).await.status, StatusCode::OK);
    assert!(!Project::load(&root).unwrap().index_is_stale());
}

#[tokio::test]
async fn quiz_crud_and_grading() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);
    let frame = Project::load(&root).unwrap().frames()[0].frame.clone();
    let q = quiz("anatomy-1", &frame, 0);

    let r = post(&app, "/quizzes", serde_json::to_value(&q).unwrap()).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = post(&app, "/quizzes", serde_json::to_value(&q).unwrap()).await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let list = get(&app, "/quizzes").await.json();
    assert_eq!(list, json!([{ "id": "anatomy-1", "title": "Quiz anatomy-1", "questions": 2 }]));
    let back: Quiz = serde_json::from_value(get(&app, "/quizzes/anatomy-1").await.json()).unwrap();
    assert_eq!(back, q);

    // Dangling anchor is a validation issue with a path.
    let mut bad = quiz("anatomy-2", &frame, 0);
    if let Question::Mcq(m) = &mut bad.questions[0] {
        m.options[0].feedback[0].anchor = Anchor::Section { id: 9999 };
    }
    let r = post(&app, "/quizzes", serde_json::to_value(&bad).unwrap()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let issues = r.json()["issues"].clone();
    assert!(
        issues.to_string().contains("questions[0].options[0].feedback[0].anchor.id"),
        "{issues}"
    );

    // Malformed body names the offending field.
    let mut raw = serde_json::to_value(&q).unwrap();
    raw["questions"][1]["tolerance"] = json!("wide");
    let r = send(&app, "PUT", "/quizzes/anatomy-1", Some(raw.to_string())).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    // Question is internally tagged, so the path stops at the question.
    let err = r.error();
    assert_eq!(err.path.as_deref(), Some("questions[1]"));
    assert!(err.message.contains("invalid type"), "{}", err.message);

    let mut renamed = q.clone();
    renamed.title = "Renamed".into();
    let r = send(&app, "PUT", "/quizzes/other", Some(serde_json::to_string(&renamed).unwrap())).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error().path.as_deref(), Some("id"));
    let r = send(&app, "PUT", "/quizzes/anatomy-1", Some(serde_json::to_string(&renamed).unwrap())).await;
    assert_eq!(r.status, StatusCode::OK);

    let r = post(&app, "/quizzes/anatomy-1/grade", json!({ "question": 0, "answer": { "type": "mcq", "chosen": [0] } })).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["type"], "mcq");
    assert_eq!(r.json()["correct"], true);
    assert_eq!(r.json()["feedback"].as_array().unwrap().len(), 1);

    let path = json!({ "question": 1, "answer": { "type": "path", "path": [[28, 34], [118, 84]] } });
    let r = post(&app, "/quizzes/anatomy-1/grade", path).await;
    assert_eq!(r.json(), json!({ "type": "path", "distance": 30.0, "score": 0.5, "pass": true }));

    let wrong = json!({ "question": 1, "answer": { "type": "mcq", "chosen": [0] } });
    assert_eq!(post(&app, "/quizzes/anatomy-1/grade", wrong).await.status, StatusCode::BAD_REQUEST);
    let oob = json!({ "question": 0, "answer": { "type": "mcq", "chosen": [7] } });
    assert_eq!(post(&app, "/quizzes/anatomy-1/grade", oob).await.status, StatusCode::BAD_REQUEST);
    let missing = json!({ "question": 5, "answer": { "type": "mcq", "chosen": [] } });
    assert_eq!(post(&app, "/quizzes/anatomy-1/grade", missing).await.status, StatusCode::BAD_REQUEST);

    assert_eq!(send(&app, "DELETE", "/quizzes/anatomy-1", None).await.status, StatusCode::NO_CONTENT);
    assert_eq!(get(&app, "/quizzes/anatomy-1").await.status, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "PUT", "/quizzes/anatomy-1", Some(serde_json::to_string(&q).unwrap())).await.status, StatusCode::NOT_FOUND);
    assert!(Project::load(&root).unwrap().quiz_ids().is_empty());
}

#[tokio::test]
async fn inpaint_falls_back_when_backend_is_down() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    // Port 9 (discard) is closed in the sandbox; the connection is refused.
    let app = app(&root, Some("http://127.0.0.1:9/inpaint"));
    let frame = Project::load(&root).unwrap().frames()[0].frame.key();

    let r = post(&app, "/inpaint", json!({ "frame": frame, "section": 0 })).await;
    assert_eq!(r.status, StatusCode::OK);
    let out: InpaintResponse = serde_json::from_value(r.json()).unwrap();
    assert!(out.fell_back);
    assert_eq!(out.backend, "local");

    let asset = get(&app, &out.asset_url).await;
    assert_eq!(asset.status, StatusCode::OK);
    assert_eq!(image::load_from_memory(&asset.bytes).unwrap().width(), 160);

    let r = post(&app, "/inpaint", json!({ "frame": frame, "section": 4000 })).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error().path.as_deref(), Some("section"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_quiz_writes_keep_manifest_whole() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);
    let frame = Project::load(&root).unwrap().frames()[0].frame.clone();

    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            let body = serde_json::to_value(quiz(&format!("q{i:02}"), &frame, 0)).unwrap();
            tokio::spawn(async move { post(&app, "/quizzes", body).await.status })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    let p = Project::load(&root).unwrap();
    assert_eq!(p.quiz_ids().len(), 16);
    for id in p.quiz_ids() {
        p.get_quiz(id).unwrap();
    }
}

#[tokio::test]
async fn failed_write_leaves_manifest_intact() {
    let dir = tempfile::tempdir().unwrap();
    let root = project(dir.path(), 3);
    let app = app(&root, None);
    let frame = Project::load(&root).unwrap().frames()[0].frame.clone();
    assert_eq!(post(&app, "/quizzes", serde_json::to_value(quiz("kept", &frame, 0)).unwrap()).await.status, StatusCode::CREATED);
    let before = std::fs::read(root.join("manifest.json")).unwrap();

    // Writing a quiz file now fails.
    std::fs::remove_dir_all(root.join("quizzes")).unwrap();
    std::fs::write(root.join("quizzes"), b"in the way").unwrap();

    let r = post(&app, "/quizzes", serde_json::to_value(quiz("lost", &frame, 0)).unwrap()).await;
    assert_eq!(r.status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(std::fs::read(root.join("manifest.json")).unwrap(), before);
    let list = get(&app, "/quizzes").await;
    assert_eq!(list.status, StatusCode::INTERNAL_SERVER_ERROR);
    let manifest: Value = serde_json::from_slice(&before).unwrap();
    assert_eq!(manifest["quizzes"], json!(["kept"]));
}

#[test]
fn search_request_round_trips() {
    let scene = PolygonScene {
        width: 160,
        height: 90,
        polygons: vec![ComponentPolygon::new(
            ClassId::TOOL,
            vec![Point::new(1.0, 1.0), Point::new(5.0, 1.0), Point::new(5.0, 5.0)],
        )],
    };
    let req = surgq_service::api::SearchRequest {
        scene,
        k: None,
        min_gap_ms: Some(0),
    };
    let v = serde_json::to_value(&req).unwrap();
    assert!(v.get("k").is_none());
    assert_eq!(req.params().k, 9);
    assert_eq!(serde_json::from_value::<surgq_service::api::SearchRequest>(v).unwrap(), req);
}
