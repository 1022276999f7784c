//! Binary containers for coefficient sets and field archives, and JSON
//! document helpers.
//!
//! Both containers are little-endian: an 8-byte magic, a header of `u32`
//! values, a payload of `f64` arrays and a trailing `u64` FNV-1a checksum of
//! the payload bytes.
//!
//! Coefficients (`MLOZC001`), header `nlat nlon nlev_out nfeat nlev
//! clim_kind`, payload `level_height_m lat lon coeffs alpha x_mean x_std
//! y_mean y_std cap_clim[slots][nlat][nlon][nlev - nlev_out]`.
//!
//! Fields (`MLOZF001`), header `ntime nlat nlon nlev variable spinup_days`,
//! payload `level_height_m lat lon data[ntime][nlat][nlon][nlev]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::climatology::{Climatology, ClimatologyKind};
use crate::error::{MlozError, Result};
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;
use crate::trainer::{CoefficientParts, CoefficientSet, TrainingMeta};

pub const COEFF_MAGIC: &[u8; 8] = b"MLOZC001";
pub const FIELD_MAGIC: &[u8; 8] = b"MLOZF001";
const HEADER_WORDS: usize = 6;
const PREAMBLE: usize = 8 + 4 * HEADER_WORDS;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental 64-bit FNV-1a hash.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(FNV_OFFSET)
    }
}

impl Fnv1a {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::default();
    h.update(bytes);
    h.finish()
}

/// Exact size in bytes of a coefficient file.
pub fn coefficient_file_len(grid: &GridSpec, kind: ClimatologyKind) -> usize {
    let n = grid.cap_level_index();
    let c = grid.ncols();
    let floats = grid.nlev() + grid.nlat() + grid.nlon() + c * n * n + 5 * c * n + kind.slots() * c * (grid.nlev() - n);
    PREAMBLE + 8 * floats + 8
}

/// Exact size in bytes of a field file.
pub fn field_file_len(grid: &GridSpec, ntime: usize) -> usize {
    PREAMBLE + 8 * (grid.nlev() + grid.nlat() + grid.nlon() + ntime * grid.npoints()) + 8
}

struct PayloadWriter<W: Write> {
    out: W,
    hash: Fnv1a,
    path: PathBuf,
}

impl<W: Write> PayloadWriter<W> {
    fn floats(&mut self, values: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in values.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.hash.update(&buf);
            self.out.write_all(&buf).map_err(|e| MlozError::io(&self.path, e))?;
        }
        Ok(())
    }
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomically(
    path: &Path,
    body: impl FnOnce(&mut PayloadWriter<BufWriter<fs::File>>) -> Result<()>,
) -> Result<()> {
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let file = fs::File::create(&tmp).map_err(|e| MlozError::io(&tmp, e))?;
        let mut w = PayloadWriter {
            out: BufWriter::new(file),
            hash: Fnv1a::default(),
            path: tmp.clone(),
        };
        body(&mut w)?;
        let sum = w.hash.finish();
        w.out
            .write_all(&sum.to_le_bytes())
            .map_err(|e| MlozError::io(&tmp, e))?;
        let file = w.out.into_inner().map_err(|e| MlozError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| MlozError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| MlozError::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_preamble<W: Write>(w: &mut PayloadWriter<W>, magic: &[u8; 8], header: [usize; HEADER_WORDS]) -> Result<()> {
    let mut buf = magic.to_vec();
    for h in header {
        let v = u32::try_from(h).map_err(|_| MlozError::Structural(format!("dimension {h} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.out.write_all(&buf).map_err(|e| MlozError::io(&w.path, e))
}

fn write_grid<W: Write>(w: &mut PayloadWriter<W>, grid: &GridSpec) -> Result<()> {
    w.floats(grid.level_height_m())?;
    w.floats(grid.lat_deg())?;
    w.floats(grid.lon_deg())
}

/// Path of the JSON sidecar holding a coefficient file's training metadata.
pub fn meta_sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes the binary container and its metadata sidecar.
pub fn write_coefficients(set: &CoefficientSet, path: &Path) -> Result<()> {
    let grid = set.grid();
    let n = set.nfeat();
    let nlev = grid.nlev();
    let clim = set.cap_climatology();
    let kind = clim.kind();
    write_atomically(path, |w| {
        write_preamble(
            w,
            COEFF_MAGIC,
            [grid.nlat(), grid.nlon(), n, n, nlev, kind.code() as usize],
        )?;
        write_grid(w, grid)?;
        for part in [
            set.coeffs(),
            set.alpha(),
            set.x_mean(),
            set.x_std(),
            set.y_mean(),
            set.y_std(),
        ] {
            w.floats(part)?;
        }
        let mut cap = Vec::with_capacity(kind.slots() * grid.ncols() * (nlev - n));
        for col in clim.values().chunks_exact(nlev) {
            cap.extend_from_slice(&col[n..]);
        }
        w.floats(&cap)
    })?;
    write_json(&meta_sidecar_path(path), set.meta())
}

struct Parsed<'a> {
    path: &'a Path,
    header: [usize; HEADER_WORDS],
    payload: &'a [u8],
}

fn parse_container<'a>(path: &'a Path, bytes: &'a [u8], magic: &[u8; 8]) -> Result<Parsed<'a>> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(MlozError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    if bytes.len() < PREAMBLE + 8 {
        return Err(MlozError::Dimension {
            path: path.to_path_buf(),
            message: format!("file is only {} bytes", bytes.len()),
        });
    }
    let mut header = [0usize; HEADER_WORDS];
    for (i, h) in header.iter_mut().enumerate() {
        let o = 8 + 4 * i;
        *h = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    Ok(Parsed {
        path,
        header,
        payload: &bytes[PREAMBLE..bytes.len() - 8],
    })
}

impl<'a> Parsed<'a> {
    /// Checks the payload length against `floats` values and verifies the
    /// checksum.
    fn verify(&self, floats: Option<usize>, trailer: &[u8]) -> Result<()> {
        let want = floats.and_then(|f| f.checked_mul(8));
        if want != Some(self.payload.len()) {
            return Err(MlozError::Dimension {
                path: self.path.to_path_buf(),
                message: format!(
                    "header implies {} payload bytes, file has {}",
                    want.map_or_else(|| "overflowing".to_string(), |w| w.to_string()),
                    self.payload.len()
                ),
            });
        }
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        let computed = fnv1a(self.payload);
        if stored != computed {
            return Err(MlozError::Checksum {
                path: self.path.to_path_buf(),
                stored,
                computed,
            });
        }
        Ok(())
    }

    fn invalid(&self, message: impl std::fmt::Display) -> MlozError {
        MlozError::InvalidFile {
            path: self.path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

struct FloatReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl FloatReader<'_> {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.bytes[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        self.pos += 8 * n;
        out
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MlozError::io(path, e))
}

fn read_grid(p: &Parsed<'_>, r: &mut FloatReader<'_>, nlat: usize, nlon: usize, nlev: usize) -> Result<GridSpec> {
    let levels = r.take(nlev);
    let lat = r.take(nlat);
    let lon = r.take(nlon);
    GridSpec::new(levels, lat, lon).map_err(|e| p.invalid(e))
}

fn checked_sum(terms: &[(usize, usize)]) -> Option<usize> {
    terms
        .iter()
        .try_fold(0usize, |acc, &(a, b)| a.checked_mul(b).and_then(|x| acc.checked_add(x)))
}

/// Reads and fully re-validates a coefficient file. The metadata sidecar is
/// optional.
pub fn read_coefficients(path: &Path) -> Result<CoefficientSet> {
    let bytes = read_file(path)?;
    let p = parse_container(path, &bytes, COEFF_MAGIC)?;
    let [nlat, nlon, nlev_out, nfeat, nlev, kind_code] = p.header;
    let kind = ClimatologyKind::from_code(kind_code as u32)
        .ok_or_else(|| p.invalid(format!("unknown climatology kind {kind_code}")))?;
    let dim_err = |message: String| MlozError::Dimension {
        path: path.to_path_buf(),
        message,
    };
    if nlev_out != nfeat || nlev_out > nlev {
        return Err(dim_err(format!("nlev_out {nlev_out}, nfeat {nfeat}, nlev {nlev}")));
    }
    let ncols = nlat.checked_mul(nlon);
    let floats = ncols.and_then(|c| {
        checked_sum(&[
            (nlev + nlat + nlon, 1),
            (c, nlev_out.checked_mul(nfeat)?),
            (c, 5 * nlev_out),
            (kind.slots(), c.checked_mul(nlev - nlev_out)?),
        ])
    });
    p.verify(floats, &bytes[bytes.len() - 8..])?;
    let ncols = ncols.unwrap();

    let mut r = FloatReader {
        bytes: p.payload,
        pos: 0,
    };
    let grid = read_grid(&p, &mut r, nlat, nlon, nlev)?;
    if grid.cap_level_index() != nlev_out {
        return Err(dim_err(format!(
            "nlev_out {nlev_out} differs from the cap level {} implied by the heights",
            grid.cap_level_index()
        )));
    }
    let n = nlev_out;
    let parts = CoefficientParts {
        coeffs: r.take(ncols * n * n),
        alpha: r.take(ncols * n),
        x_mean: r.take(ncols * n),
        x_std: r.take(ncols * n),
        y_mean: r.take(ncols * n),
        y_std: r.take(ncols * n),
    };
    for (offset, std) in [(0, &parts.x_std), (ncols * n, &parts.y_std)] {
        if let Some(i) = std.iter().position(|s| !(*s > 0.0)) {
            return Err(MlozError::NonPositiveStd {
                path: path.to_path_buf(),
                index: offset + i,
            });
        }
    }
    let cap = r.take(kind.slots() * ncols * (nlev - n));
    let mut values = vec![0.0; kind.slots() * ncols * nlev];
    if nlev > n {
        for (dst, src) in values.chunks_exact_mut(nlev).zip(cap.chunks_exact(nlev - n)) {
            dst[n..].copy_from_slice(src);
        }
    }
    let clim = Climatology::from_values(grid.clone(), kind, Variable::Ozone, values).map_err(|e| p.invalid(e))?;
    let sidecar = meta_sidecar_path(path);
    let meta = if sidecar.exists() {
        read_json::<TrainingMeta>(&sidecar)?
    } else {
        TrainingMeta::default()
    };
    CoefficientSet::from_parts(grid, parts, clim, meta).map_err(|e| p.invalid(e))
}

pub fn write_fields(series: &FieldSeries, path: &Path) -> Result<()> {
    let g = series.grid();
    write_atomically(path, |w| {
        write_preamble(
            w,
            FIELD_MAGIC,
            [
                series.ntime(),
                g.nlat(),
                g.nlon(),
                g.nlev(),
                series.variable().code() as usize,
                series.spinup_days(),
            ],
        )?;
        write_grid(w, g)?;
        w.floats(series.data())
    })
}

pub fn read_fields(path: &Path) -> Result<FieldSeries> {
    let bytes = read_file(path)?;
    let p = parse_container(path, &bytes, FIELD_MAGIC)?;
    let [ntime, nlat, nlon, nlev, code, spinup] = p.header;
    let variable =
        Variable::from_code(code as u32).ok_or_else(|| p.invalid(format!("unknown variable code {code}")))?;
    let floats = nlat
        .checked_mul(nlon)
        .and_then(|c| c.checked_mul(nlev))
        .and_then(|np| checked_sum(&[(nlev + nlat + nlon, 1), (ntime, np)]));
    p.verify(floats, &bytes[bytes.len() - 8..])?;
    let mut r = FloatReader {
        bytes: p.payload,
        pos: 0,
    };
    let grid = read_grid(&p, &mut r, nlat, nlon, nlev)?;
    let data = r.take(ntime * grid.npoints());
    if spinup > ntime {
        return Err(p.invalid(format!("spin-up of {spinup} days exceeds {ntime} stored days")));
    }
    let series = FieldSeries::new_checked(grid, variable, data).map_err(|e| p.invalid(e))?;
    Ok(series.with_spinup_days(spinup))
}

/// Reads a JSON document, reporting the offending field path on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MlozError::io(path, e))?;
    parse_json(&text)
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        MlozError::Config {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| MlozError::Structural(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| MlozError::io(path, e))
}
