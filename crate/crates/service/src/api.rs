//! HTTP endpoints. Every handler is a thin adapter over `surgq_core`.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::Path as FsPath;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use surgq_core::corpus::{encode_thumbnail, FrameEntry, Project};
use surgq_core::geometry::{extract_polygons, ExtractConfig, GeometryError, Point, PolygonScene};
use surgq_core::keyframes::Keyframe;
use surgq_core::quiz::{
    grade_extract, grade_mcq, grade_path, render_highlight, resolve_anchor, Anchor, ExtractGrade,
    HighlightStyle, McqGrade, PathGrade, Question, Quiz, QuizError,
};
use surgq_core::search::{self, QueryEcho, Reference, SearchError, SearchParams, DEFAULT_GRID};
use surgq_core::{Exec, FrameRef};

use crate::error::{parse_body, ApiError};
use crate::state::SharedState;

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/frames", get(list_frames))
        .route("/frames/{id}/image", get(frame_image))
        .route("/frames/{id}/thumb", get(frame_thumb))
        .route("/frames/{id}/polygons", get(frame_polygons))
        .route("/frames/{id}/sections/{section}/highlight", get(frame_highlight))
        .route("/keyframes", get(list_keyframes))
        .route("/search", post(search_frames))
        .route("/index/rebuild", post(rebuild_index))
        .route("/quizzes", get(list_quizzes).post(create_quiz))
        .route("/quizzes/{id}", get(get_quiz).put(put_quiz).delete(delete_quiz))
        .route("/quizzes/{id}/grade", post(grade))
        .route("/inpaint", post(inpaint))
        .route("/assets/{name}", get(asset))
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let (method, uri) = (req.method().clone(), req.uri().clone());
    let start = Instant::now();
    let resp = next.run(req).await;
    log::info!("{method} {uri} {} {:.1?}", resp.status().as_u16(), start.elapsed());
    resp
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn find_frame<'a>(project: &'a Project, id: &str) -> ApiResult<&'a FrameEntry> {
    project
        .frame_by_key(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown frame {id}")))
}

fn image_url(frame: &FrameRef) -> String {
    format!("/frames/{}/image", frame.key())
}

fn thumb_url(frame: &FrameRef) -> String {
    format!("/frames/{}/thumb", frame.key())
}

fn encode_png(img: &RgbImage) -> ApiResult<Vec<u8>> {
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(out)
}

fn content_type(name: &str) -> &'static str {
    match FsPath::new(name).extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

fn bytes_response(name: &str, bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, content_type(name))], bytes).into_response()
}

fn read_file(project: &Project, rel: &str) -> ApiResult<Vec<u8>> {
    std::fs::read(project.path_of(rel)).map_err(|e| ApiError::internal(format!("{rel}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub id: String,
    pub frame: FrameRef,
    pub width: u32,
    pub height: u32,
    pub fused: bool,
    pub keyframe: bool,
    pub image_url: String,
    pub thumb_url: String,
}

async fn list_frames(State(st): State<SharedState>) -> Json<Vec<FrameSummary>> {
    let project = st.project();
    Json(
        project
            .frames()
            .iter()
            .map(|f| FrameSummary {
                id: f.frame.key(),
                frame: f.frame.clone(),
                width: f.width,
                height: f.height,
                fused: f.fused.is_some(),
                keyframe: st.is_keyframe(&f.frame),
                image_url: image_url(&f.frame),
                thumb_url: thumb_url(&f.frame),
            })
            .collect(),
    )
}

async fn frame_image(State(st): State<SharedState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let project = st.project();
        let e = find_frame(&project, &id)?;
        match &e.image {
            Some(rel) => Ok(bytes_response(rel, read_file(&project, rel)?)),
            None => Ok(bytes_response("x.png", encode_png(&project.read_image(&e.frame)?)?)),
        }
    })
    .await
}

async fn frame_thumb(State(st): State<SharedState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let project = st.project();
        let e = find_frame(&project, &id)?;
        match &e.thumb {
            Some(rel) => Ok(bytes_response(rel, read_file(&project, rel)?)),
            None => {
                let jpg = encode_thumbnail(&project.read_image(&e.frame)?)?;
                Ok(bytes_response("x.jpg", jpg))
            }
        }
    })
    .await
}

async fn frame_polygons(State(st): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<PolygonScene>> {
    blocking(move || {
        let project = st.project();
        let e = find_frame(&project, &id)?;
        let scene = project.read_fused(&e.frame)?;
        Ok(Json(extract_polygons(&scene, &ExtractConfig::default())))
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
pub struct HighlightQuery {
    #[serde(default)]
    pub style: Option<HighlightStyle>,
}

async fn frame_highlight(
    State(st): State<SharedState>,
    Path((id, section)): Path<(String, u32)>,
    Query(q): Query<HighlightQuery>,
) -> ApiResult<Response> {
    blocking(move || {
        let project = st.project();
        let e = find_frame(&project, &id)?;
        let scene = project.read_fused(&e.frame)?;
        let region = resolve_anchor(&scene, &Anchor::Section { id: section })
            .map_err(|err| ApiError::not_found(format!("frame {id}: {err}")))?;
        let image = project.read_image(&e.frame)?;
        let h = render_highlight(&image, &region, q.style.unwrap_or(HighlightStyle::Outline));
        Ok(bytes_response("x.png", encode_png(&h.image)?))
    })
    .await
}

async fn list_keyframes(State(st): State<SharedState>) -> Json<Vec<Keyframe>> {
    Json(st.keyframes().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub scene: PolygonScene,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap_ms: Option<u64>,
}

impl SearchRequest {
    pub fn params(&self) -> SearchParams {
        let d = SearchParams::default();
        SearchParams {
            k: self.k.unwrap_or(d.k),
            min_gap_ms: self.min_gap_ms.unwrap_or(d.min_gap_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiHit {
    pub id: String,
    pub frame: FrameRef,
    pub distance: f64,
    pub thumb_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: QueryEcho,
    pub hits: Vec<ApiHit>,
}

fn stale() -> ApiError {
    ApiError::new(
        StatusCode::CONFLICT,
        "stale_index",
        "the search index is missing or out of date; POST /index/rebuild",
    )
}

async fn search_frames(State(st): State<SharedState>, body: Bytes) -> ApiResult<Json<SearchResponse>> {
    let req: SearchRequest = parse_body(&body)?;
    blocking(move || {
        let project = st.project();
        let index = st.index().ok_or_else(stale)?;
        if project.index_is_stale() {
            return Err(stale());
        }
        req.scene.validate().map_err(|e| match e {
            GeometryError::InvalidScene { path, reason } => ApiError::bad_request(format!("scene.{path}"), reason),
            other => ApiError::bad_request("scene", other.to_string()),
        })?;
        if let Some(f) = project.frames().first() {
            if (req.scene.width, req.scene.height) != (f.width, f.height) {
                return Err(ApiError::bad_request(
                    "scene.width",
                    format!("canvas must be {}x{} to match the project frames", f.width, f.height),
                ));
            }
        }
        let params = req.params();
        let result = search::search(&index, &Reference::Polygons(req.scene), &params).map_err(|e| match e {
            SearchError::InvalidK => ApiError::bad_request("k", e.to_string()),
            SearchError::InvalidReference(_) | SearchError::GridMismatch { .. } => {
                ApiError::bad_request("scene", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        })?;
        Ok(Json(SearchResponse {
            query: result.query,
            hits: result
                .hits
                .into_iter()
                .map(|h| ApiHit {
                    id: h.frame.key(),
                    thumb_url: thumb_url(&h.frame),
                    frame: h.frame,
                    distance: h.distance,
                })
                .collect(),
        }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebuildResponse {
    pub fingerprint: String,
    pub frames: usize,
    pub grid_w: u32,
    pub grid_h: u32,
}

async fn rebuild_index(State(st): State<SharedState>) -> ApiResult<Json<RebuildResponse>> {
    let _writer = st.writer.lock().await;
    let st = st.clone();
    blocking(move || {
        let mut project = (*st.project()).clone();
        let grid = project
            .manifest()
            .index
            .as_ref()
            .map_or(DEFAULT_GRID, |i| (i.grid_w, i.grid_h));
        let index = project.build_index(Exec::default(), grid)?;
        project.save()?;
        let resp = RebuildResponse {
            fingerprint: index.fingerprint_hex(),
            frames: index.len(),
            grid_w: grid.0,
            grid_h: grid.1,
        };
        st.replace_project(project);
        st.swap_index(index);
        Ok(Json(resp))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizSummary {
    pub id: String,
    pub title: String,
    pub questions: usize,
}

async fn list_quizzes(State(st): State<SharedState>) -> ApiResult<Json<Vec<QuizSummary>>> {
    blocking(move || {
        let project = st.project();
        let mut out = Vec::new();
        for id in project.quiz_ids() {
            let q = project.get_quiz(id)?;
            out.push(QuizSummary {
                id: q.id,
                title: q.title,
                questions: q.questions.len(),
            });
        }
        Ok(Json(out))
    })
    .await
}

async fn get_quiz(State(st): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<Quiz>> {
    blocking(move || Ok(Json(st.project().get_quiz(&id)?))).await
}

async fn store_quiz(st: SharedState, quiz: Quiz, create: bool) -> ApiResult<Quiz> {
    let _writer = st.writer.lock().await;
    let st = st.clone();
    blocking(move || {
        let mut project = (*st.project()).clone();
        let exists = project.quiz_ids().contains(&quiz.id);
        if create && exists {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "exists",
                format!("quiz {} already exists", quiz.id),
            ));
        }
        if !create && !exists {
            return Err(ApiError::not_found(format!("unknown quiz {}", quiz.id)));
        }
        project.put_quiz(&quiz)?;
        st.replace_project(project);
        Ok(quiz)
    })
    .await
}

async fn create_quiz(State(st): State<SharedState>, body: Bytes) -> ApiResult<(StatusCode, Json<Quiz>)> {
    let quiz: Quiz = parse_body(&body)?;
    let q = store_quiz(st, quiz, true).await?;
    Ok((StatusCode::CREATED, Json(q)))
}

async fn put_quiz(State(st): State<SharedState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Quiz>> {
    let quiz: Quiz = parse_body(&body)?;
    if quiz.id != id {
        return Err(ApiError::bad_request("id", format!("body id {:?} does not match {id:?}", quiz.id)));
    }
    Ok(Json(store_quiz(st, quiz, false).await?))
}

async fn delete_quiz(State(st): State<SharedState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let _writer = st.writer.lock().await;
    let st = st.clone();
    blocking(move || {
        let mut project = (*st.project()).clone();
        project.delete_quiz(&id)?;
        st.replace_project(project);
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Answer {
    Mcq {
        chosen: BTreeSet<usize>,
    },
    Extract {
        option: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drop: Option<Point>,
    },
    Path {
        path: Vec<Point>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRequest {
    pub question: usize,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GradeResponse {
    Mcq(McqGrade),
    Extract(ExtractGrade),
    Path(PathGrade),
}

/// Grades one answer against a question of the same type.
pub fn grade_answer(question: &Question, answer: &Answer) -> ApiResult<GradeResponse> {
    let r: Result<GradeResponse, QuizError> = match (question, answer) {
        (Question::Mcq(q), Answer::Mcq { chosen }) => grade_mcq(q, chosen).map(GradeResponse::Mcq),
        (Question::Extract(q), Answer::Extract { option, drop }) => {
            grade_extract(q, *option, *drop).map(GradeResponse::Extract)
        }
        (Question::Path(q), Answer::Path { path }) => grade_path(q, path).map(GradeResponse::Path),
        _ => return Err(ApiError::bad_request("answer.type", "answer type does not match the question")),
    };
    Ok(r?)
}

async fn grade(
    State(st): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<GradeResponse>> {
    let req: GradeRequest = parse_body(&body)?;
    blocking(move || {
        let quiz = st.project().get_quiz(&id)?;
        let q = quiz.questions.get(req.question).ok_or_else(|| {
            ApiError::bad_request("question", format!("quiz {id} has {} questions", quiz.questions.len()))
        })?;
        Ok(Json(grade_answer(q, &req.answer)?))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub frame: String,
    pub section: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub asset: String,
    pub asset_url: String,
    pub backend: String,
    pub fell_back: bool,
}

async fn inpaint(State(st): State<SharedState>, body: Bytes) -> ApiResult<Json<InpaintResponse>> {
    let req: InpaintRequest = parse_body(&body)?;
    blocking(move || {
        let project = st.project();
        let e = find_frame(&project, &req.frame)?;
        let scene = project.read_fused(&e.frame)?;
        let region = resolve_anchor(&scene, &Anchor::Section { id: req.section })
            .map_err(|err| ApiError::bad_request("section", err.to_string()))?;
        let image = project.read_image(&e.frame)?;
        let out = st
            .inpainter
            .run(&image, &region.mask)
            .map_err(|err| ApiError::new(StatusCode::BAD_GATEWAY, "inpaint_failed", err.to_string()))?;
        let asset = project.put_asset(&encode_png(&out.image)?, "png")?;
        Ok(Json(InpaintResponse {
            asset_url: format!("/assets/{asset}"),
            asset,
            backend: out.backend,
            fell_back: out.fell_back,
        }))
    })
    .await
}

async fn asset(State(st): State<SharedState>, Path(name): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let project = st.project();
        let path = project
            .asset_path(&name)
            .filter(|p| p.is_file())
            .ok_or_else(|| ApiError::not_found(format!("unknown asset {name}")))?;
        let bytes = std::fs::read(&path).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(bytes_response(&name, bytes))
    })
    .await
}
