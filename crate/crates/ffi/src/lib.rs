//! C ABI for `ddprior`.
//!
//! Every fallible function returns a [`DdpStatus`] and writes results through
//! out-pointers. On failure the message is available from
//! [`ddp_last_error`] on the same thread. Handles are created by
//! `ddp_*_new`/`ddp_*_from_*` functions and released with the matching
//! `ddp_*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ddprior::correlation::{self, CorrelationMode, ZetaArgs};
use ddprior::error::{Error, ErrorKind};
use ddprior::estimator::{estimate_node, EstimateTable};
use ddprior::io::{parse_network, read_dataset, PriorConfig};
use ddprior::model::{count_tuples, BeliefNet, CountTable};
use ddprior::selection::{self, FitPath, PiVector, Scenario};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Numeric = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdpMode {
    Exact = 0,
    ZetaApprox = 1,
    Quadratic = 2,
    QuadraticExact = 3,
}

impl From<DdpMode> for CorrelationMode {
    fn from(m: DdpMode) -> Self {
        match m {
            DdpMode::Exact => CorrelationMode::Exact,
            DdpMode::ZetaApprox => CorrelationMode::ZetaApprox,
            DdpMode::Quadratic => CorrelationMode::Quadratic,
            DdpMode::QuadraticExact => CorrelationMode::QuadraticExact,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpPi {
    pub pi0: f64,
    pub pi1: f64,
    pub pi2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdpFitPath {
    Unconstrained = 0,
    ZeroIntercept = 1,
    ZeroSlope = 2,
    NoIdiosyncratic = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpPiFit {
    pub pi: DdpPi,
    pub path: DdpFitPath,
    pub rss: f64,
    pub samples: usize,
    pub degenerate: bool,
}

/// Parsed network.
pub struct DdpNetwork {
    net: BeliefNet,
}

/// Count tables for every node of a network.
pub struct DdpCounts {
    tables: Vec<CountTable>,
}

/// Estimated CP-tables for every node.
pub struct DdpEstimate {
    tables: Vec<EstimateTable>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(DdpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Parse => DdpStatus::Parse,
            ErrorKind::Validation => DdpStatus::Validation,
            ErrorKind::Numeric => DdpStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> DdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DdpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DdpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DdpStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DdpStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn pi_of(p: &DdpPi) -> Result<PiVector, Failure> {
    Ok(PiVector::new(p.pi0, p.pi1, p.pi2)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer is valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ddp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn ddp_zeta_exact(
    l1: f64,
    l2: f64,
    l3: f64,
    tol: f64,
    out: *mut f64,
) -> DdpStatus {
    guard(|| {
        let z = correlation::zeta_exact(ZetaArgs::new(l1, l2, l3)?, tol)?;
        write_out(out, z, "out")
    })
}

/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn ddp_zeta_approx(l1: f64, l2: f64, l3: f64, out: *mut f64) -> DdpStatus {
    guard(|| {
        let z = correlation::zeta_approx(ZetaArgs::new(l1, l2, l3)?)?;
        write_out(out, z, "out")
    })
}

/// Row correlation `rho(alpha, gamma)`.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn ddp_rho(alpha: f64, gamma: f64, mode: DdpMode, out: *mut f64) -> DdpStatus {
    guard(|| write_out(out, correlation::rho(alpha, gamma, mode.into())?, "out"))
}

/// MSE-ratio for a symmetric MDD scenario with `n_parents` parents of the
/// given domain sizes, `totals[row]` cases per row and `n_values` means.
///
/// # Safety
/// `select`, `truth` and `out` must be valid; `radices`, `totals` and `mu`
/// must point to `n_parents`, `prod(radices)` and `n_values` elements.
#[no_mangle]
pub unsafe extern "C" fn ddp_mse_ratio(
    select: *const DdpPi,
    truth: *const DdpPi,
    radices: *const usize,
    n_parents: usize,
    totals: *const u64,
    alpha: f64,
    mu: *const f64,
    n_values: usize,
    target: usize,
    mode: DdpMode,
    out: *mut f64,
) -> DdpStatus {
    guard(|| {
        let select = pi_of(select.as_ref().ok_or_else(|| null("select"))?)?;
        let truth = pi_of(truth.as_ref().ok_or_else(|| null("truth"))?)?;
        let radices = slice(radices, n_parents, "radices")?;
        let rows = radices.iter().product();
        let scenario = Scenario::new(
            radices,
            slice(totals, rows, "totals")?.to_vec(),
            alpha,
            slice(mu, n_values, "mu")?.to_vec(),
        )?;
        let point = selection::mse_ratio(select, truth, &scenario, target, mode.into())?;
        write_out(out, point.ratio, "out")
    })
}

/// Parses a JSON network description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddp_network_from_json(
    json: *const c_char,
    out: *mut *mut DdpNetwork,
) -> DdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = parse_network(read_str(json, "json")?)?;
        out.write(Box::into_raw(Box::new(DdpNetwork { net })));
        Ok(())
    })
}

/// # Safety
/// `net` must be NULL or a handle from [`ddp_network_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddp_network_free(net: *mut DdpNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddp_network_node_count(net: *const DdpNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.nodes().len())
}

/// Counts complete tuples from CSV text with a header of node names.
///
/// # Safety
/// `net` must be a live handle, `csv` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ddp_counts_from_csv(
    net: *const DdpNetwork,
    csv: *const c_char,
    out: *mut *mut DdpCounts,
) -> DdpStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        if out.is_null() {
            return Err(null("out"));
        }
        let data = read_dataset(read_str(csv, "csv")?.as_bytes(), net)?;
        let tables = count_tuples(net, &data)?;
        out.write(Box::into_raw(Box::new(DdpCounts { tables })));
        Ok(())
    })
}

/// # Safety
/// `counts` must be NULL or a handle from [`ddp_counts_from_csv`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddp_counts_free(counts: *mut DdpCounts) {
    if !counts.is_null() {
        drop(Box::from_raw(counts));
    }
}

/// `n_f` for `row` of `node`.
///
/// # Safety
/// `counts` must be a live handle, `node` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ddp_counts_row_total(
    counts: *const DdpCounts,
    node: *const c_char,
    row: usize,
    out: *mut u64,
) -> DdpStatus {
    guard(|| {
        let tables = &counts.as_ref().ok_or_else(|| null("counts"))?.tables;
        let table = find(tables, read_str(node, "node")?, |t| &t.node)?;
        if row >= table.n_rows() {
            return Err(out_of_range("row", row));
        }
        write_out(out, table.n(row), "out")
    })
}

/// Fits `pi` from all parented tables under flat per-node priors.
///
/// # Safety
/// `counts` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ddp_fit_pi(counts: *const DdpCounts, out: *mut DdpPiFit) -> DdpStatus {
    guard(|| {
        let tables = &counts.as_ref().ok_or_else(|| null("counts"))?.tables;
        let fit = selection::fit_pi(&selection::pool_flat(tables)?)?;
        let path = match fit.path {
            FitPath::Unconstrained => DdpFitPath::Unconstrained,
            FitPath::ZeroIntercept => DdpFitPath::ZeroIntercept,
            FitPath::ZeroSlope => DdpFitPath::ZeroSlope,
            FitPath::NoIdiosyncratic => DdpFitPath::NoIdiosyncratic,
        };
        let record = DdpPiFit {
            pi: DdpPi {
                pi0: fit.pi.pi0,
                pi1: fit.pi.pi1,
                pi2: fit.pi.pi2,
            },
            path,
            rss: fit.rss,
            samples: fit.samples,
            degenerate: fit.degenerate,
        };
        write_out(out, record, "out")
    })
}

/// Estimates every node. `prior_json` may be NULL for flat priors with the
/// default `pi`.
///
/// # Safety
/// `net` and `counts` must be live handles from the same network,
/// `prior_json` NULL or NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ddp_estimate(
    net: *const DdpNetwork,
    counts: *const DdpCounts,
    prior_json: *const c_char,
    out: *mut *mut DdpEstimate,
) -> DdpStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        let counts = &counts.as_ref().ok_or_else(|| null("counts"))?.tables;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if prior_json.is_null() {
            PriorConfig::default()
        } else {
            PriorConfig::parse(read_str(prior_json, "prior_json")?)?
        };
        config.check_nodes(net)?;
        let tables = counts
            .iter()
            .map(|c| {
                let resolved = config.resolve(net, &c.node)?;
                estimate_node(c, &resolved.prior, &resolved.options)
            })
            .collect::<Result<Vec<_>, Error>>()?;
        out.write(Box::into_raw(Box::new(DdpEstimate { tables })));
        Ok(())
    })
}

/// # Safety
/// `est` must be NULL or a handle from [`ddp_estimate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddp_estimate_free(est: *mut DdpEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of rows and values of `node`'s table.
///
/// # Safety
/// `est` must be a live handle, `node` NUL-terminated, outputs valid.
#[no_mangle]
pub unsafe extern "C" fn ddp_estimate_shape(
    est: *const DdpEstimate,
    node: *const c_char,
    rows: *mut usize,
    values: *mut usize,
) -> DdpStatus {
    guard(|| {
        let tables = &est.as_ref().ok_or_else(|| null("est"))?.tables;
        let t = find(tables, read_str(node, "node")?, |t| &t.node)?;
        write_out(rows, t.layout.n_rows(), "rows")?;
        write_out(values, t.n_values(), "values")
    })
}

/// `theta_hat_{x|row}` for `node`; `clamped` (nullable) receives whether the
/// value was clamped.
///
/// # Safety
/// `est` must be a live handle, `node` NUL-terminated, `out` valid, and
/// `clamped` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ddp_estimate_theta(
    est: *const DdpEstimate,
    node: *const c_char,
    row: usize,
    x: usize,
    out: *mut f64,
    clamped: *mut bool,
) -> DdpStatus {
    guard(|| {
        let tables = &est.as_ref().ok_or_else(|| null("est"))?.tables;
        let t = find(tables, read_str(node, "node")?, |t| &t.node)?;
        if row >= t.layout.n_rows() {
            return Err(out_of_range("row", row));
        }
        if x >= t.n_values() {
            return Err(out_of_range("x", x));
        }
        write_out(out, t.theta(row, x), "out")?;
        if !clamped.is_null() {
            clamped.write(t.clamped[row * t.n_values() + x]);
        }
        Ok(())
    })
}

fn out_of_range(what: &str, v: usize) -> Failure {
    Failure(DdpStatus::OutOfRange, format!("{what} {v} is out of range"))
}

fn find<'a, T>(items: &'a [T], name: &str, key: impl Fn(&T) -> &String) -> Result<&'a T, Failure> {
    items
        .iter()
        .find(|t| key(t) == name)
        .ok_or_else(|| Failure::from(Error::UnknownNode(name.to_string())))
}
