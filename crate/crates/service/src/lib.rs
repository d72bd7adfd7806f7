//! In-memory session service behind the interactive segmentation UI.
//!
//! Every route lives under `/v1`. Sessions hold one uploaded image, its
//! superpixels (computed on first use), the current training inputs and the
//! latest segmentation. Mutations of one session are serialized by a
//! per-session lock; distinct sessions never contend.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::BuildHasher;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use dglseg::input::{seed_square, training_sets, BoundingBox};
use dglseg::io::{decode_image, decode_label_map, encode_png, label_palette};
use dglseg::metrics::pixel_accuracy;
use dglseg::{
    segment_with_partition, slic, Image, InputSource, Pixel, PixelSet, Regime, RegionAnnotation,
    SegmentConfig, SegmentationResult, SuperpixelPartition,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub segment: SegmentConfig,
    /// Seed for regime-derived inputs when a request does not carry one.
    pub rng_seed: u64,
    /// Sessions untouched for this long are dropped.
    pub idle_timeout: Duration,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            segment: SegmentConfig::default(),
            rng_seed: 0,
            idle_timeout: Duration::from_secs(30 * 60),
            max_upload_bytes: 64 << 20,
        }
    }
}

/// JSON error body: `{"error": kind, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no session `{id}`"),
        )
    }

    fn state(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "state", message)
    }
}

impl From<dglseg::Error> for ApiError {
    fn from(e: dglseg::Error) -> Self {
        match e {
            dglseg::Error::Config(_) => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "configuration",
                e.to_string(),
            ),
            dglseg::Error::Io { .. } => Self::bad_request(e.to_string()),
            dglseg::Error::Input(_) | dglseg::Error::Domain(_) => Self::validation(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Session {
    image: Arc<Image>,
    partition: Option<Arc<SuperpixelPartition>>,
    inputs: Vec<PixelSet>,
    result: Option<SegmentationResult>,
    /// The result predates the current inputs.
    stale: bool,
    groundtruth: Option<RegionAnnotation>,
    /// Clicks spent on relabels over the session's lifetime.
    clicks: usize,
    elapsed_ms: f64,
}

struct Entry {
    session: Arc<RwLock<Session>>,
    touched: Mutex<Instant>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    sessions: std::sync::RwLock<HashMap<String, Arc<Entry>>>,
    counter: AtomicU64,
    salt: RandomState,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                config,
                sessions: Default::default(),
                counter: AtomicU64::new(0),
                salt: RandomState::new(),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().expect("session map").len()
    }

    /// Drops sessions idle for longer than `max_idle`; returns how many went.
    pub fn evict_idle(&self, max_idle: Duration) -> usize {
        let now = Instant::now();
        let mut map = self.inner.sessions.write().expect("session map");
        let before = map.len();
        map.retain(|_, e| now.duration_since(*e.touched.lock().expect("touch")) <= max_idle);
        before - map.len()
    }

    fn insert(&self, session: Session) -> String {
        let n = self.inner.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{:016x}{n:x}", self.inner.salt.hash_one(n));
        let entry = Entry {
            session: Arc::new(RwLock::new(session)),
            touched: Mutex::new(Instant::now()),
        };
        self.inner
            .sessions
            .write()
            .expect("session map")
            .insert(id.clone(), Arc::new(entry));
        id
    }

    fn get(&self, id: &str) -> ApiResult<Arc<RwLock<Session>>> {
        let map = self.inner.sessions.read().expect("session map");
        let entry = map.get(id).ok_or_else(|| ApiError::not_found(id))?;
        *entry.touched.lock().expect("touch") = Instant::now();
        Ok(entry.session.clone())
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_bytes;
    let v1 = Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/superpixels", get(superpixels))
        .route("/session/{id}/inputs", post(set_inputs))
        .route("/session/{id}/segment", post(segment))
        .route("/session/{id}/relabel", post(relabel))
        .route("/session/{id}/overlay", get(overlay))
        .route("/session/{id}/groundtruth", post(groundtruth));
    Router::new()
        .nest("/v1", v1)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until the process is stopped, sweeping idle sessions once a minute.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let idle = sweeper.config().idle_timeout;
        let mut tick = tokio::time::interval(Duration::from_secs(60).min(idle));
        loop {
            tick.tick().await;
            let gone = sweeper.evict_idle(idle);
            if gone > 0 {
                log::info!("evicted {gone} idle session(s)");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Runs of equal values as `[value, count]` pairs.
pub fn run_lengths(values: impl IntoIterator<Item = usize>) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    for v in values {
        match out.last_mut() {
            Some(last) if last[0] == v => last[1] += 1,
            _ => out.push([v, 1]),
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(ApiError::bad_request("empty image payload"));
    }
    let image = decode_image(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let created = SessionCreated {
        id: String::new(),
        width: image.width(),
        height: image.height(),
        channels: image.channels(),
    };
    let id = state.insert(Session {
        image: Arc::new(image),
        partition: None,
        inputs: Vec::new(),
        result: None,
        stale: false,
        groundtruth: None,
        clicks: 0,
        elapsed_ms: 0.0,
    });
    log::debug!("session {id}: {}x{}", created.width, created.height);
    Ok((StatusCode::CREATED, Json(SessionCreated { id, ..created })).into_response())
}

/// Computes the partition on first use.
async fn ensure_partition(
    state: &AppState,
    session: &mut Session,
) -> ApiResult<Arc<SuperpixelPartition>> {
    if let Some(p) = &session.partition {
        return Ok(p.clone());
    }
    let image = session.image.clone();
    let params = state.config().segment.slic.clone();
    let partition = tokio::task::spawn_blocking(move || slic(&image, &params))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    let partition = Arc::new(partition);
    session.partition = Some(partition.clone());
    Ok(partition)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuperpixelsResponse {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// Superpixel id of every pixel in raster order, run-length encoded.
    pub rle: Vec<[usize; 2]>,
}

async fn superpixels(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SuperpixelsResponse>> {
    let session = state.get(&id)?;
    let mut s = session.write().await;
    let p = ensure_partition(&state, &mut s).await?;
    Ok(Json(SuperpixelsResponse {
        width: p.width(),
        height: p.height(),
        count: p.len(),
        rle: run_lengths(p.assignment().iter().map(|&k| k as usize)),
    }))
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxInput {
    pub r1: usize,
    pub c1: usize,
    pub r2: usize,
    pub c2: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedInput {
    pub row: usize,
    pub col: usize,
    /// Side of the square grown around the seed.
    #[serde(default = "default_side")]
    pub side: usize,
}

fn default_side() -> usize {
    50
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionInput {
    pub label: usize,
    /// `[row, col]` pairs.
    #[serde(default)]
    pub pixels: Vec<[usize; 2]>,
    #[serde(default)]
    pub boxes: Vec<BoxInput>,
    #[serde(default)]
    pub seeds: Vec<SeedInput>,
}

/// Either explicit per-region inputs or a regime simulated from the attached
/// ground truth (`"gt:50"`, `"pts:10"`, ...).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsRequest {
    #[serde(default)]
    pub regions: Vec<RegionInput>,
    #[serde(default)]
    pub regime: Option<String>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputsResponse {
    pub regions: usize,
    /// Labeled pixels per region, in label order.
    pub pixels: Vec<usize>,
    pub stale: bool,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))
}

fn build_inputs(state: &AppState, s: &Session, req: &InputsRequest) -> ApiResult<Vec<PixelSet>> {
    let (w, h) = (s.image.width(), s.image.height());
    let mut sets = if let Some(regime) = &req.regime {
        if !req.regions.is_empty() {
            return Err(ApiError::validation(
                "send either a regime or explicit regions, not both",
            ));
        }
        let regime: Regime = regime.parse()?;
        let gt = s.groundtruth.as_ref().ok_or_else(|| {
            ApiError::state("simulated inputs need ground truth; POST groundtruth first")
        })?;
        training_sets(gt, &regime, req.rng_seed.unwrap_or(state.config().rng_seed))?
    } else {
        let mut sets = Vec::new();
        for region in &req.regions {
            let mut pixels: Vec<Pixel> = region
                .pixels
                .iter()
                .map(|&[r, c]| Pixel::new(r, c))
                .collect();
            let mut source = InputSource::Manual;
            for b in &region.boxes {
                let bb = BoundingBox::new(b.r1, b.c1, b.r2, b.c2)?;
                if !bb.fits(w, h) {
                    return Err(ApiError::validation(format!(
                        "box ({}, {})-({}, {}) leaves the {w}x{h} image",
                        b.r1, b.c1, b.r2, b.c2
                    )));
                }
                pixels.extend(bb.pixels());
                source = InputSource::BbFraction;
            }
            for seed in &region.seeds {
                if seed.row >= h || seed.col >= w || seed.side == 0 {
                    return Err(ApiError::validation(format!(
                        "seed ({}, {}) with side {} is invalid for a {w}x{h} image",
                        seed.row, seed.col, seed.side
                    )));
                }
                pixels
                    .extend(seed_square(Pixel::new(seed.row, seed.col), seed.side, w, h).pixels());
                source = InputSource::SeedSquares;
            }
            if pixels.is_empty() {
                continue;
            }
            sets.push(PixelSet::new(region.label, pixels, source, w, h)?);
        }
        sets
    };
    if sets.len() < 2 {
        return Err(ApiError::validation(format!(
            "inputs cover {} region(s); at least 2 regions need labeled pixels",
            sets.len()
        )));
    }
    sets.sort_by_key(|s| s.label());
    Ok(sets)
}

fn store_inputs(s: &mut Session, sets: Vec<PixelSet>) {
    if s.inputs != sets {
        s.inputs = sets;
        s.stale = s.result.is_some();
    }
}

async fn set_inputs(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<InputsResponse>> {
    let req: InputsRequest = parse_json(&body)?;
    let session = state.get(&id)?;
    let mut s = session.write().await;
    let sets = build_inputs(&state, &s, &req)?;
    store_inputs(&mut s, sets);
    Ok(Json(InputsResponse {
        regions: s.inputs.len(),
        pixels: s.inputs.iter().map(PixelSet::len).collect(),
        stale: s.stale,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub regions: usize,
    pub superpixels: usize,
    /// Label of every superpixel in id order, run-length encoded.
    pub labels_rle: Vec<[usize; 2]>,
    pub clicks: usize,
    /// Pixel accuracy against the attached ground truth, if any.
    pub accuracy: Option<f64>,
    pub elapsed_ms: f64,
    pub alphabet_size: usize,
    pub stale: bool,
}

fn summary(s: &Session) -> ApiResult<SegmentSummary> {
    let r = s
        .result
        .as_ref()
        .ok_or_else(|| ApiError::state("no segmentation yet; POST segment first"))?;
    let accuracy = match &s.groundtruth {
        Some(gt) => Some(pixel_accuracy(&r.pixel_labels, gt.labels(), 0.0)?),
        None => None,
    };
    Ok(SegmentSummary {
        regions: r.regions,
        superpixels: r.partition.len(),
        labels_rle: run_lengths(r.superpixel_labels.iter().copied()),
        clicks: s.clicks,
        accuracy,
        elapsed_ms: s.elapsed_ms,
        alphabet_size: r.spec.alphabet_size(),
        stale: s.stale,
    })
}

/// Segments with the stored inputs, or with the inputs in the body if given.
async fn segment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SegmentSummary>> {
    let session = state.get(&id)?;
    let mut s = session.write().await;
    if !body.iter().all(u8::is_ascii_whitespace) {
        let req: InputsRequest = parse_json(&body)?;
        let sets = build_inputs(&state, &s, &req)?;
        store_inputs(&mut s, sets);
    }
    if s.inputs.is_empty() {
        return Err(ApiError::validation(
            "inputs cover 0 region(s); at least 2 regions need labeled pixels",
        ));
    }
    let partition = ensure_partition(&state, &mut s).await?;
    let image = s.image.clone();
    let inputs = s.inputs.clone();
    let config = state.config().segment.clone();
    let started = Instant::now();
    let result = tokio::task::spawn_blocking(move || {
        segment_with_partition(&image, (*partition).clone(), &inputs, &config)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    s.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    s.result = Some(result);
    s.stale = false;
    Ok(Json(summary(&s)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelabelRequest {
    pub superpixel: usize,
    pub label: usize,
}

async fn relabel(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SegmentSummary>> {
    let req: RelabelRequest = parse_json(&body)?;
    let session = state.get(&id)?;
    let mut s = session.write().await;
    let result = s
        .result
        .as_mut()
        .ok_or_else(|| ApiError::state("no segmentation to relabel; POST segment first"))?;
    result.relabel_superpixel(req.superpixel, req.label)?;
    s.clicks += state.config().segment.click_cost;
    Ok(Json(summary(&s)?))
}

#[derive(Debug, Deserialize)]
struct OverlayQuery {
    alpha: Option<f64>,
}

/// The image with labels tinted in and superpixel borders drawn white.
async fn overlay(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let alpha = q.alpha.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ApiError::validation(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let session = state.get(&id)?;
    let mut s = session.write().await;
    let partition = ensure_partition(&state, &mut s).await?;
    let mut rgb = s.image.to_rgb8();
    if let Some(r) = &s.result {
        let palette = label_palette();
        for (px, &l) in rgb.chunks_exact_mut(3).zip(&r.pixel_labels) {
            let tint = palette[l as usize];
            for (c, t) in px.iter_mut().zip(tint) {
                *c = (f64::from(*c) * (1.0 - alpha) + f64::from(t) * alpha).round() as u8;
            }
        }
    }
    for (px, edge) in rgb.chunks_exact_mut(3).zip(partition.boundary_mask()) {
        if edge {
            px.fill(255);
        }
    }
    let png = encode_png(&Image::from_rgb8(s.image.width(), s.image.height(), &rgb)?)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruthResponse {
    pub regions: usize,
    /// Accuracy of the current result, if there is one.
    pub accuracy: Option<f64>,
}

async fn groundtruth(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<GroundTruthResponse>> {
    let gt = decode_label_map(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let session = state.get(&id)?;
    let mut s = session.write().await;
    if gt.width() != s.image.width() || gt.height() != s.image.height() {
        return Err(ApiError::validation(format!(
            "ground truth is {}x{}, image is {}x{}",
            gt.width(),
            gt.height(),
            s.image.width(),
            s.image.height()
        )));
    }
    let regions = gt.regions();
    s.groundtruth = Some(gt);
    let accuracy = if s.result.is_some() {
        summary(&s)?.accuracy
    } else {
        None
    };
    Ok(Json(GroundTruthResponse { regions, accuracy }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_lengths_merge_equal_neighbors() {
        assert_eq!(
            run_lengths([1, 1, 2, 2, 2, 1]),
            vec![[1, 2], [2, 3], [1, 1]]
        );
        assert!(run_lengths(Vec::<usize>::new()).is_empty());
    }

    #[test]
    fn eviction_keeps_fresh_sessions() {
        let state = AppState::new(ServiceConfig::default());
        let image = Image::from_gray8(1, 1, &[0]).unwrap();
        state.insert(Session {
            image: Arc::new(image),
            partition: None,
            inputs: Vec::new(),
            result: None,
            stale: false,
            groundtruth: None,
            clicks: 0,
            elapsed_ms: 0.0,
        });
        assert_eq!(state.evict_idle(Duration::from_secs(60)), 0);
        std::thread::sleep(Duration::from_millis(5));
        assert_eq!(state.evict_idle(Duration::ZERO), 1);
        assert_eq!(state.session_count(), 0);
    }
}
