//! C interface to `mdc-track`.
//!
//! Objects cross the boundary as opaque handles created by `mdc_*_new`,
//! `mdc_*_read` or a pipeline call and released with the matching
//! `mdc_*_free`. Every fallible call returns an [`MdcStatus`]; on failure
//! [`mdc_last_error_message`] describes the error on the calling thread.
//! Status values 1 to 5 equal the exit status of the command-line tool for
//! the same failure.

use mdc_track::config::RunConfig;
use mdc_track::dataset::{read_events, read_reco, write_events, write_reco, DatasetError};
use mdc_track::geometry::Vec3;
use mdc_track::helix::{Helix, HelixParams, KinematicState};
use mdc_track::metrics::{MetricsReport, Rate, StageReport};
use mdc_track::pipeline::{evaluate_tracks, Evaluation, PipelineError};
use mdc_track::reco::{reconstruct_events, RecoTrack, Stage};
use mdc_track::sim::{generate_events, Category, Event};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdcStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Schema = 3,
    Alignment = 4,
    Metrics = 5,
    NullPointer = 10,
    InvalidArgument = 11,
    OutOfRange = 12,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdcCategory {
    Single = 0,
    ConventionalTwo = 1,
    CloseByTwo = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdcStage {
    Finder = 0,
    Fitter = 1,
}

/// Run configuration.
pub struct MdcConfig {
    inner: RunConfig,
}

/// Simulated or loaded events.
pub struct MdcDataset {
    events: Vec<Event>,
}

/// Reconstructed tracks of a dataset, finder rows then fitter rows per event.
pub struct MdcReco {
    tracks: Vec<RecoTrack>,
}

/// Finding and fitting reports.
pub struct MdcEvaluation {
    inner: Evaluation,
}

/// Helix parameters at the point of closest approach to the origin.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MdcHelix {
    /// cm
    pub d_r: f64,
    /// rad, in [0, 2pi)
    pub phi0: f64,
    /// charge / pT, (GeV/c)^-1
    pub kappa: f64,
    /// cm
    pub d_z: f64,
    pub tan_lambda: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MdcTrack {
    pub event_id: u64,
    pub reco_id: u32,
    pub stage: MdcStage,
    pub n_hits: usize,
    pub helix: MdcHelix,
    /// NaN for finder rows.
    pub chi2: f64,
    pub ndf: i64,
    pub converged: bool,
    pub z_constrained: bool,
}

/// A rate with its central 68.27% interval. `valid` is false when the
/// denominator is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MdcRate {
    pub valid: bool,
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MdcSummary {
    pub n_detectable: u64,
    pub n_matched: u64,
    pub n_matched_q: u64,
    pub n_wrong_q: u64,
    pub n_clone: u64,
    pub n_fake: u64,
    pub n_reco: u64,
    pub eps_track: MdcRate,
    pub eps_track_q: MdcRate,
    pub r_wrong_q: MdcRate,
    pub r_clone: MdcRate,
    pub r_fake: MdcRate,
    /// NaN when fewer than two residuals are available.
    pub pt_resolution: f64,
    pub n_resolution: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MdcStatus, String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e.exit_code() {
            1 => MdcStatus::Io,
            2 => MdcStatus::Config,
            3 => MdcStatus::Schema,
            4 => MdcStatus::Alignment,
            _ => MdcStatus::Metrics,
        };
        Failure(status, e.to_string())
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        PipelineError::from(e).into()
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, turning errors and panics into a status plus a thread-local
/// message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MdcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            MdcStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(MdcStatus::NullPointer, format!("{name} is NULL"))
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn get_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MdcStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn path(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    text(p, name).map(PathBuf::from)
}

/// Stores a boxed handle in `out`.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = get_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn helix_out(p: &HelixParams) -> MdcHelix {
    MdcHelix {
        d_r: p.d_r,
        phi0: p.phi0,
        kappa: p.kappa,
        d_z: p.d_z,
        tan_lambda: p.tan_lambda,
    }
}

fn rate_out(r: &Option<Rate>) -> MdcRate {
    match r {
        Some(r) => MdcRate {
            valid: true,
            numerator: r.numerator,
            denominator: r.denominator,
            value: r.value,
            lo: r.lo,
            hi: r.hi,
        },
        None => MdcRate::default(),
    }
}

fn summary_out(r: &MetricsReport) -> MdcSummary {
    let c = &r.counts;
    MdcSummary {
        n_detectable: c.n_detectable,
        n_matched: c.n_matched,
        n_matched_q: c.n_matched_q,
        n_wrong_q: c.n_wrong_q,
        n_clone: c.n_clone,
        n_fake: c.n_fake,
        n_reco: c.n_reco,
        eps_track: rate_out(&r.eps_track),
        eps_track_q: rate_out(&r.eps_track_q),
        r_wrong_q: rate_out(&r.r_wrong_q),
        r_clone: rate_out(&r.r_clone),
        r_fake: rate_out(&r.r_fake),
        pt_resolution: r.pt_resolution.unwrap_or(f64::NAN),
        n_resolution: r.n_resolution as u64,
    }
}

fn stage_report(eval: &Evaluation, stage: MdcStage) -> Result<&StageReport, Failure> {
    match stage {
        MdcStage::Finder => Ok(&eval.finding),
        MdcStage::Fitter => eval.fitting.as_ref().ok_or_else(|| {
            Failure(MdcStatus::OutOfRange, "the reco tracks have no fitter rows".into())
        }),
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mdc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mdc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration: no seed, 1 T field, default detector and
/// algorithm settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_new(out: *mut *mut MdcConfig) -> MdcStatus {
    guard(|| {
        emit(
            out,
            MdcConfig {
                inner: RunConfig::default(),
            },
        )
    })
}

/// Parses a TOML configuration held in memory.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_parse(toml: *const c_char, out: *mut *mut MdcConfig) -> MdcStatus {
    guard(|| {
        let inner = RunConfig::parse(text(toml, "toml")?).map_err(PipelineError::from)?;
        emit(out, MdcConfig { inner })
    })
}

/// Reads a TOML configuration file.
///
/// # Safety
/// `file` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_load(file: *const c_char, out: *mut *mut MdcConfig) -> MdcStatus {
    guard(|| {
        let inner = RunConfig::load(&path(file, "file")?).map_err(PipelineError::from)?;
        emit(out, MdcConfig { inner })
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_free(cfg: *mut MdcConfig) {
    release(cfg)
}

/// Sets the generator seed.
///
/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_set_seed(cfg: *mut MdcConfig, seed: u64) -> MdcStatus {
    guard(|| {
        get_mut(cfg, "cfg")?.inner.seed = Some(seed);
        Ok(())
    })
}

/// Sets the event category and count used by [`mdc_dataset_generate`].
///
/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_set_events(
    cfg: *mut MdcConfig,
    category: MdcCategory,
    events: u64,
) -> MdcStatus {
    guard(|| {
        let g = &mut get_mut(cfg, "cfg")?.inner.generate;
        g.category = match category {
            MdcCategory::Single => Category::Single,
            MdcCategory::ConventionalTwo => Category::ConventionalTwo,
            MdcCategory::CloseByTwo => Category::CloseByTwo,
        };
        g.events = events;
        Ok(())
    })
}

/// Sets the mean noise hits per event and the drift resolution in cm.
///
/// # Safety
/// `cfg` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_set_detector(
    cfg: *mut MdcConfig,
    noise_rate: f64,
    sigma_drift: f64,
) -> MdcStatus {
    guard(|| {
        let c = get_mut(cfg, "cfg")?;
        let mut next = c.inner.clone();
        next.generate.noise_rate = noise_rate;
        next.generate.sigma_drift = sigma_drift;
        next.validate().map_err(PipelineError::from)?;
        c.inner = next;
        Ok(())
    })
}

/// Simulates the configured events. Requires a seed.
///
/// # Safety
/// `cfg` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_dataset_generate(cfg: *const MdcConfig, out: *mut *mut MdcDataset) -> MdcStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.inner;
        let seed = c.seed.ok_or(PipelineError::MissingSeed)?;
        let geometry = c.geometry().map_err(PipelineError::from)?;
        let events = generate_events(&geometry, &c.sim(), c.generate.category, seed, c.generate.events);
        emit(out, MdcDataset { events })
    })
}

/// Reads a hit CSV file. With `strict`, any validation finding fails the
/// call with `MDC_STATUS_SCHEMA`.
///
/// # Safety
/// `cfg` must be a valid handle, `file` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_dataset_read(
    cfg: *const MdcConfig,
    file: *const c_char,
    strict: bool,
    out: *mut *mut MdcDataset,
) -> MdcStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.inner;
        let geometry = c.geometry().map_err(PipelineError::from)?;
        let data = read_events(&path(file, "file")?, &geometry, strict)?;
        emit(out, MdcDataset { events: data.events })
    })
}

/// Writes a hit CSV file; the row count goes to `rows` when not NULL.
///
/// # Safety
/// `ds` must be a valid handle, `file` a NUL-terminated string and `rows`
/// NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_dataset_write(
    ds: *const MdcDataset,
    file: *const c_char,
    rows: *mut usize,
) -> MdcStatus {
    guard(|| {
        let n = write_events(&get(ds, "ds")?.events, &path(file, "file")?)?;
        if let Some(r) = rows.as_mut() {
            *r = n;
        }
        Ok(())
    })
}

/// Number of events and total number of hits.
///
/// # Safety
/// `ds` must be a valid handle; `events` and `hits` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_dataset_size(
    ds: *const MdcDataset,
    events: *mut usize,
    hits: *mut usize,
) -> MdcStatus {
    guard(|| {
        let d = get(ds, "ds")?;
        if let Some(e) = events.as_mut() {
            *e = d.events.len();
        }
        if let Some(h) = hits.as_mut() {
            *h = d.events.iter().map(|e| e.hits.len()).sum();
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdc_dataset_free(ds: *mut MdcDataset) {
    release(ds)
}

/// Runs the finder and, when `fit` is set, the fitter on every event.
///
/// # Safety
/// `cfg` and `ds` must be valid handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_reconstruct(
    cfg: *const MdcConfig,
    ds: *const MdcDataset,
    fit: bool,
    out: *mut *mut MdcReco,
) -> MdcStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.inner;
        let d = get(ds, "ds")?;
        let geometry = c.geometry().map_err(PipelineError::from)?;
        let tracks = reconstruct_events(&d.events, &geometry, &c.finder(), &c.fitter(), fit);
        emit(out, MdcReco { tracks })
    })
}

/// Reads a reco CSV file.
///
/// # Safety
/// `file` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_reco_read(file: *const c_char, out: *mut *mut MdcReco) -> MdcStatus {
    guard(|| {
        let tracks = read_reco(&path(file, "file")?)?;
        emit(out, MdcReco { tracks })
    })
}

/// Writes a reco CSV file; the row count goes to `rows` when not NULL.
///
/// # Safety
/// `reco` must be a valid handle, `file` a NUL-terminated string and
/// `rows` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_reco_write(
    reco: *const MdcReco,
    file: *const c_char,
    rows: *mut usize,
) -> MdcStatus {
    guard(|| {
        let n = write_reco(&get(reco, "reco")?.tracks, &path(file, "file")?)?;
        if let Some(r) = rows.as_mut() {
            *r = n;
        }
        Ok(())
    })
}

/// Number of track rows.
///
/// # Safety
/// `reco` must be a valid handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_reco_len(reco: *const MdcReco, len: *mut usize) -> MdcStatus {
    guard(|| {
        *get_mut(len, "len")? = get(reco, "reco")?.tracks.len();
        Ok(())
    })
}

/// Copies track row `index` into `out`.
///
/// # Safety
/// `reco` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_reco_get(reco: *const MdcReco, index: usize, out: *mut MdcTrack) -> MdcStatus {
    guard(|| {
        let tracks = &get(reco, "reco")?.tracks;
        let t = tracks.get(index).ok_or_else(|| {
            Failure(
                MdcStatus::OutOfRange,
                format!("track index {index} out of range (len {})", tracks.len()),
            )
        })?;
        *get_mut(out, "out")? = MdcTrack {
            event_id: t.event_id,
            reco_id: t.reco_id,
            stage: match t.stage {
                Stage::Finder => MdcStage::Finder,
                Stage::Fitter => MdcStage::Fitter,
            },
            n_hits: t.hits.len(),
            helix: helix_out(&t.params),
            chi2: t.chi2,
            ndf: t.ndf,
            converged: t.converged,
            z_constrained: t.z_constrained,
        };
        Ok(())
    })
}

/// # Safety
/// `reco` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdc_reco_free(reco: *mut MdcReco) {
    release(reco)
}

/// Scores `reco` against the truth of `ds` with the configured matching
/// rule and bins.
///
/// # Safety
/// `cfg`, `ds` and `reco` must be valid handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_evaluate(
    cfg: *const MdcConfig,
    ds: *const MdcDataset,
    reco: *const MdcReco,
    out: *mut *mut MdcEvaluation,
) -> MdcStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.inner;
        let inner = evaluate_tracks(c, &get(ds, "ds")?.events, &get(reco, "reco")?.tracks)?;
        emit(out, MdcEvaluation { inner })
    })
}

/// Unbinned numbers of one stage. `MDC_STATUS_OUT_OF_RANGE` when the
/// fitter stage was requested but the reco tracks have no fitter rows.
///
/// # Safety
/// `eval` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_evaluation_summary(
    eval: *const MdcEvaluation,
    stage: MdcStage,
    out: *mut MdcSummary,
) -> MdcStatus {
    guard(|| {
        let r = stage_report(&get(eval, "eval")?.inner, stage)?;
        *get_mut(out, "out")? = summary_out(&r.overall);
        Ok(())
    })
}

/// Full report of one stage, binned values included, as `key=value` lines.
/// Release the string with [`mdc_string_free`].
///
/// # Safety
/// `eval` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_evaluation_key_values(
    eval: *const MdcEvaluation,
    stage: MdcStage,
    out: *mut *mut c_char,
) -> MdcStatus {
    guard(|| {
        let r = stage_report(&get(eval, "eval")?.inner, stage)?;
        let s = CString::new(r.key_values()).expect("report has no NUL");
        *get_mut(out, "out")? = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `eval` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdc_evaluation_free(eval: *mut MdcEvaluation) {
    release(eval)
}

/// Helix through a charged particle at `position` (cm) with `momentum`
/// (GeV/c) in a field of `b_field` tesla.
///
/// # Safety
/// `position` and `momentum` must point to 3 doubles, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_helix_from_state(
    position: *const f64,
    momentum: *const f64,
    charge: i32,
    b_field: f64,
    out: *mut MdcHelix,
) -> MdcStatus {
    guard(|| {
        if position.is_null() || momentum.is_null() {
            return Err(null("position or momentum"));
        }
        let p = std::slice::from_raw_parts(position, 3);
        let m = std::slice::from_raw_parts(momentum, 3);
        let state = KinematicState {
            position: Vec3::new(p[0], p[1], p[2]),
            momentum: Vec3::new(m[0], m[1], m[2]),
            charge,
        };
        let h = Helix::from_state(&state, b_field)
            .map_err(|e| Failure(MdcStatus::InvalidArgument, e.to_string()))?;
        *get_mut(out, "out")? = helix_out(&h.params);
        Ok(())
    })
}

/// Position, momentum and charge at the point of closest approach.
///
/// # Safety
/// `helix` must be valid, `position` and `momentum` must point to 3
/// writable doubles and `charge` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_helix_to_state(
    helix: *const MdcHelix,
    b_field: f64,
    position: *mut f64,
    momentum: *mut f64,
    charge: *mut i32,
) -> MdcStatus {
    guard(|| {
        let h = get(helix, "helix")?;
        if position.is_null() || momentum.is_null() {
            return Err(null("position or momentum"));
        }
        let params = HelixParams {
            d_r: h.d_r,
            phi0: h.phi0,
            kappa: h.kappa,
            d_z: h.d_z,
            tan_lambda: h.tan_lambda,
        };
        let s = Helix::new(params, b_field)
            .map_err(|e| Failure(MdcStatus::InvalidArgument, e.to_string()))?
            .to_state();
        std::slice::from_raw_parts_mut(position, 3).copy_from_slice(s.position.as_slice());
        std::slice::from_raw_parts_mut(momentum, 3).copy_from_slice(s.momentum.as_slice());
        *get_mut(charge, "charge")? = s.charge;
        Ok(())
    })
}
