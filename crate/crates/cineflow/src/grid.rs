//! Core array types for dynamic MRI data and their on-disk formats.
//!
//! All grids are row-major with time outermost: a sequence entry lives at
//! `(t, x, y)` where `x` indexes the readout/phase-encode rows that the
//! sampling mask selects. Three self-describing formats cover every artifact:
//!
//! * `CXSEQ1 <Nt> <Nx> <Ny>\n` + `Nt*Nx*Ny` little-endian `(f64 re, f64 im)`
//!   pairs — image sequences, velocity components, coil maps.
//! * `CXMASK1 <Nt> <Nx_full>\n` + `Nt` lines of ascending sampled row indices.
//! * `CXKSP1 <Nt> <Nc> <Nx> <Ny>\n` + payload in `(t, coil, x, y)` order +
//!   a trailing embedded `CXMASK1` block.
//!
//! Velocity fields serialize as two stacked `CXSEQ1` blocks (vx then vy).
//! Round trips are bit-exact; loaders reject NaN/Inf payloads.

use std::io::Write;
use std::path::Path;

use ndarray::{Array3, Array4};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex-valued image sequence on a `(Nt, Nx, Ny)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    data: Array3<Complex64>,
}

/// Complex velocity field; `vx`/`vy` hold the x- and y-components on the
/// same grid as the image sequence they transport.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub vx: ImageSequence,
    pub vy: ImageSequence,
}

/// Per-frame set of sampled k-space rows (phase-encode undersampling).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    nx_full: usize,
    rows: Vec<Vec<usize>>,
}

/// Multi-coil k-space samples, zero-filled outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    samples: Array4<Complex64>,
    mask: SamplingMask,
}

/// Complex coil sensitivity maps on a `(Nc, Nx, Ny)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    maps: Array3<Complex64>,
}

fn check_dims(nt: usize, nx: usize, ny: usize) -> Result<()> {
    if nt < 1 || nx < 2 || ny < 2 {
        return Err(Error::Invariant(format!(
            "grid dims must satisfy Nt >= 1, Nx >= 2, Ny >= 2, got {}x{}x{}",
            nt, nx, ny
        )));
    }
    Ok(())
}

fn check_finite_slice(data: &[Complex64], what: &str) -> Result<()> {
    for z in data {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
    }
    Ok(())
}

impl ImageSequence {
    /// Wraps an array, validating dims and finiteness.
    pub fn new(data: Array3<Complex64>) -> Result<Self> {
        let (nt, nx, ny) = data.dim();
        check_dims(nt, nx, ny)?;
        let data = ensure_standard(data);
        check_finite_slice(data.as_slice().unwrap(), "image sequence")?;
        Ok(ImageSequence { data })
    }

    /// All-zero sequence of the given dims.
    pub fn zeros(nt: usize, nx: usize, ny: usize) -> Result<Self> {
        check_dims(nt, nx, ny)?;
        Ok(ImageSequence { data: Array3::zeros((nt, nx, ny)) })
    }

    /// Wraps without the finiteness scan; callers guarantee validity.
    pub(crate) fn from_array_unchecked(data: Array3<Complex64>) -> Self {
        ImageSequence { data: ensure_standard(data) }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<Complex64> {
        self.data
    }

    /// Real parts as a new array.
    pub fn re(&self) -> Array3<f64> {
        self.data.mapv(|z| z.re)
    }

    /// Imaginary parts as a new array.
    pub fn im(&self) -> Array3<f64> {
        self.data.mapv(|z| z.im)
    }

    /// Pointwise magnitude.
    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|z| z.norm())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(32 + self.data.len() * 16);
        write_seq_block(&mut bytes, &self.data);
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let (seq, off) = parse_seq_block(&bytes, 0, path)?;
        expect_eof(&bytes, off, path)?;
        Ok(seq)
    }
}

impl VelocityField {
    pub fn new(vx: ImageSequence, vy: ImageSequence) -> Result<Self> {
        if vx.dims() != vy.dims() {
            return Err(Error::DimMismatch(format!(
                "velocity components differ: {:?} vs {:?}",
                vx.dims(),
                vy.dims()
            )));
        }
        Ok(VelocityField { vx, vy })
    }

    pub fn zeros(nt: usize, nx: usize, ny: usize) -> Result<Self> {
        Ok(VelocityField {
            vx: ImageSequence::zeros(nt, nx, ny)?,
            vy: ImageSequence::zeros(nt, nx, ny)?,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.vx.dims()
    }

    pub fn vx(&self) -> &ImageSequence {
        &self.vx
    }

    pub fn vy(&self) -> &ImageSequence {
        &self.vy
    }

    pub(crate) fn vx_mut(&mut self) -> &mut ImageSequence {
        &mut self.vx
    }

    pub(crate) fn vy_mut(&mut self) -> &mut ImageSequence {
        &mut self.vy
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(64 + self.vx.data.len() * 32);
        write_seq_block(&mut bytes, &self.vx.data);
        write_seq_block(&mut bytes, &self.vy.data);
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let (vx, off) = parse_seq_block(&bytes, 0, path)?;
        let (vy, off) = parse_seq_block(&bytes, off, path)?;
        expect_eof(&bytes, off, path)?;
        VelocityField::new(vx, vy)
    }
}

impl SamplingMask {
    /// Builds a mask from per-frame row lists; rows must be strictly
    /// ascending and within `[0, nx_full)`.
    pub fn new(nx_full: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invariant("mask needs at least one frame".into()));
        }
        for (t, frame) in rows.iter().enumerate() {
            for w in frame.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Invariant(format!(
                        "mask rows of frame {} not strictly ascending",
                        t
                    )));
                }
            }
            if let Some(&last) = frame.last() {
                if last >= nx_full {
                    return Err(Error::Invariant(format!(
                        "mask row {} of frame {} out of range 0..{}",
                        last, t, nx_full
                    )));
                }
            }
        }
        Ok(SamplingMask { nx_full, rows })
    }

    /// Full sampling: every row of every frame.
    pub fn full(nt: usize, nx_full: usize) -> Self {
        let all: Vec<usize> = (0..nx_full).collect();
        SamplingMask { nx_full, rows: vec![all; nt] }
    }

    pub fn nt(&self) -> usize {
        self.rows.len()
    }

    pub fn nx_full(&self) -> usize {
        self.nx_full
    }

    pub fn frame_rows(&self, t: usize) -> &[usize] {
        &self.rows[t]
    }

    pub fn is_full(&self) -> bool {
        self.rows.iter().all(|r| r.len() == self.nx_full)
    }

    /// Boolean lookup table, `table[t][row]`.
    pub fn to_bool_table(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|frame| {
                let mut b = vec![false; self.nx_full];
                for &r in frame {
                    b[r] = true;
                }
                b
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        write_mask_block(&mut bytes, self);
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let (mask, off) = parse_mask_block(&bytes, 0, path)?;
        expect_eof(&bytes, off, path)?;
        Ok(mask)
    }
}

impl KSpaceData {
    /// Wraps samples `(Nt, Nc, Nx, Ny)` with their mask, checking that every
    /// entry outside the mask is exactly zero.
    pub fn new(samples: Array4<Complex64>, mask: SamplingMask) -> Result<Self> {
        let (nt, nc, nx, ny) = samples.dim();
        check_dims(nt, nx, ny)?;
        if nc < 1 {
            return Err(Error::Invariant("k-space needs at least one coil".into()));
        }
        if mask.nt() != nt || mask.nx_full() != nx {
            return Err(Error::DimMismatch(format!(
                "mask {}x{} does not match k-space {}x{}",
                mask.nt(),
                mask.nx_full(),
                nt,
                nx
            )));
        }
        let samples = if samples.is_standard_layout() {
            samples
        } else {
            samples.as_standard_layout().into_owned()
        };
        check_finite_slice(samples.as_slice().unwrap(), "k-space")?;
        let sampled = mask.to_bool_table();
        for t in 0..nt {
            for c in 0..nc {
                for x in 0..nx {
                    if sampled[t][x] {
                        continue;
                    }
                    for y in 0..ny {
                        if samples[(t, c, x, y)] != Complex64::ZERO {
                            return Err(Error::Invariant(format!(
                                "nonzero sample at unsampled row {} (t={}, coil={})",
                                x, t, c
                            )));
                        }
                    }
                }
            }
        }
        Ok(KSpaceData { samples, mask })
    }

    pub(crate) fn from_parts_unchecked(samples: Array4<Complex64>, mask: SamplingMask) -> Self {
        KSpaceData { samples, mask }
    }

    /// `(Nt, Nc, Nx, Ny)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.samples.dim()
    }

    pub fn samples(&self) -> &Array4<Complex64> {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut Array4<Complex64> {
        &mut self.samples
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (nt, nc, nx, ny) = self.samples.dim();
        let mut bytes = Vec::with_capacity(64 + self.samples.len() * 16);
        write!(&mut bytes, "CXKSP1 {} {} {} {}\n", nt, nc, nx, ny).unwrap();
        for z in self.samples.iter() {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        write_mask_block(&mut bytes, &self.mask);
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let (header, mut off) = read_header_line(&bytes, 0, path)?;
        let fields = parse_header_fields(&header, "CXKSP1", 4, path)?;
        let (nt, nc, nx, ny) = (fields[0], fields[1], fields[2], fields[3]);
        check_dims(nt, nx, ny).map_err(|_| Error::MalformedHeader {
            path: path.into(),
            reason: format!("bad k-space dims {}x{}x{}x{}", nt, nc, nx, ny),
        })?;
        if nc < 1 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: "coil count must be >= 1".into(),
            });
        }
        let n = nt * nc * nx * ny;
        let payload = take_payload(&bytes, off, n, path)?;
        off += n * 16;
        let samples = Array4::from_shape_vec((nt, nc, nx, ny), payload).unwrap();
        check_finite_slice(samples.as_slice().unwrap(), &format!("{}", path.display()))?;
        let (mask, off) = parse_mask_block(&bytes, off, path)?;
        expect_eof(&bytes, off, path)?;
        KSpaceData::new(samples, mask)
    }
}

impl CoilMaps {
    pub fn new(maps: Array3<Complex64>) -> Result<Self> {
        let (nc, nx, ny) = maps.dim();
        if nc < 1 {
            return Err(Error::Invariant("need at least one coil map".into()));
        }
        check_dims(nc.max(1), nx, ny)?;
        let maps = ensure_standard(maps);
        check_finite_slice(maps.as_slice().unwrap(), "coil maps")?;
        Ok(CoilMaps { maps })
    }

    /// `(Nc, Nx, Ny)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.maps.dim()
    }

    pub fn maps(&self) -> &Array3<Complex64> {
        &self.maps
    }

    /// Root-sum-of-squares magnitude over coils at each pixel.
    pub fn rss(&self) -> ndarray::Array2<f64> {
        let (nc, nx, ny) = self.maps.dim();
        let mut out = ndarray::Array2::zeros((nx, ny));
        for c in 0..nc {
            for x in 0..nx {
                for y in 0..ny {
                    out[(x, y)] += self.maps[(c, x, y)].norm_sqr();
                }
            }
        }
        out.mapv_inplace(f64::sqrt);
        out
    }

    /// Stored as a `CXSEQ1` block with the coil axis in the time slot.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(32 + self.maps.len() * 16);
        write_seq_block(&mut bytes, &self.maps);
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let seq = ImageSequence::load(path)?;
        CoilMaps::new(seq.into_array())
    }
}

fn ensure_standard(a: Array3<Complex64>) -> Array3<Complex64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

// ---------------------------------------------------------------------------
// Format plumbing
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact { path: path.into(), what: "file not found".into() }
        } else {
            Error::io(path, e)
        }
    })
}

/// Writes via a temp file in the target directory plus an atomic rename.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_seq_block(out: &mut Vec<u8>, data: &Array3<Complex64>) {
    let (nt, nx, ny) = data.dim();
    write!(out, "CXSEQ1 {} {} {}\n", nt, nx, ny).unwrap();
    for z in data.iter() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

fn write_mask_block(out: &mut Vec<u8>, mask: &SamplingMask) {
    write!(out, "CXMASK1 {} {}\n", mask.nt(), mask.nx_full()).unwrap();
    for frame in &mask.rows {
        let line: Vec<String> = frame.iter().map(|r| r.to_string()).collect();
        out.extend_from_slice(line.join(" ").as_bytes());
        out.push(b'\n');
    }
}

/// Reads one `\n`-terminated ASCII header line starting at `off`.
fn read_header_line(bytes: &[u8], off: usize, path: &Path) -> Result<(String, usize)> {
    let rest = &bytes[off.min(bytes.len())..];
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::MalformedHeader {
        path: path.into(),
        reason: "missing newline-terminated header".into(),
    })?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::MalformedHeader {
        path: path.into(),
        reason: "header is not ASCII".into(),
    })?;
    Ok((line.to_string(), off + nl + 1))
}

fn parse_header_fields(line: &str, magic: &str, n: usize, path: &Path) -> Result<Vec<usize>> {
    let mut it = line.split_whitespace();
    match it.next() {
        Some(m) if m == magic => {}
        other => {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("expected magic {:?}, found {:?}", magic, other.unwrap_or("")),
            })
        }
    }
    let fields: Vec<&str> = it.collect();
    if fields.len() != n {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: format!("expected {} header fields, found {}", n, fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<usize>().map_err(|_| Error::MalformedHeader {
                path: path.into(),
                reason: format!("non-integer header field {:?}", f),
            })
        })
        .collect()
}

fn take_payload(bytes: &[u8], off: usize, n: usize, path: &Path) -> Result<Vec<Complex64>> {
    let need = n * 16;
    let avail = bytes.len().saturating_sub(off);
    if avail < need {
        return Err(Error::PayloadMismatch {
            path: path.into(),
            reason: format!("payload needs {} bytes, file has {}", need, avail),
        });
    }
    let mut out = Vec::with_capacity(n);
    let mut p = off;
    for _ in 0..n {
        let re = f64::from_le_bytes(bytes[p..p + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[p + 8..p + 16].try_into().unwrap());
        out.push(Complex64::new(re, im));
        p += 16;
    }
    Ok(out)
}

fn parse_seq_block(bytes: &[u8], off: usize, path: &Path) -> Result<(ImageSequence, usize)> {
    let (header, mut off) = read_header_line(bytes, off, path)?;
    let fields = parse_header_fields(&header, "CXSEQ1", 3, path)?;
    let (nt, nx, ny) = (fields[0], fields[1], fields[2]);
    check_dims(nt, nx, ny)?;
    let n = nt * nx * ny;
    let payload = take_payload(bytes, off, n, path)?;
    off += n * 16;
    let data = Array3::from_shape_vec((nt, nx, ny), payload).unwrap();
    check_finite_slice(data.as_slice().unwrap(), &format!("{}", path.display()))?;
    Ok((ImageSequence { data }, off))
}

fn parse_mask_block(bytes: &[u8], off: usize, path: &Path) -> Result<(SamplingMask, usize)> {
    let (header, mut off) = read_header_line(bytes, off, path)?;
    let fields = parse_header_fields(&header, "CXMASK1", 2, path)?;
    let (nt, nx_full) = (fields[0], fields[1]);
    if nt < 1 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: "mask needs at least one frame".into(),
        });
    }
    let mut rows = Vec::with_capacity(nt);
    for t in 0..nt {
        let (line, next) = read_header_line(bytes, off, path).map_err(|_| Error::PayloadMismatch {
            path: path.into(),
            reason: format!("mask is missing row line for frame {}", t),
        })?;
        off = next;
        let frame: Result<Vec<usize>> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<usize>().map_err(|_| Error::PayloadMismatch {
                    path: path.into(),
                    reason: format!("non-integer mask row {:?} in frame {}", f, t),
                })
            })
            .collect();
        rows.push(frame?);
    }
    Ok((SamplingMask::new(nx_full, rows)?, off))
}

fn expect_eof(bytes: &[u8], off: usize, path: &Path) -> Result<()> {
    if off != bytes.len() {
        return Err(Error::PayloadMismatch {
            path: path.into(),
            reason: format!("{} unexpected trailing bytes", bytes.len() - off),
        });
    }
    Ok(())
}
