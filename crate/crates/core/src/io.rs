//! File formats.
//!
//! Grid fields travel as `SGF1`: one ASCII header line
//!
//! ```text
//! SGF1 d n_1 .. n_d L_1 .. L_d comps\n
//! ```
//!
//! followed by `comps` blocks of `n_1*..*n_d` little-endian f64 values in
//! row-major order (axis 0 slowest). Time-dependent velocities add a second
//! header line
//!
//! ```text
//! TVEL1 order t_0 t_1 .. t_N\n
//! ```
//!
//! carrying the metric order and the time grid; the data section then holds
//! one block per component per time slice, slices outermost. Landmark sets
//! are CSV with a header row `id,x1[,x2][,p1[,p2]]`.
//!
//! Parsers work on byte slices, validate before allocating (sizes are capped
//! and the payload length must match the header exactly), and never panic on
//! malformed input. Writers are deterministic: floats are printed in Rust's
//! shortest round-trip form, and files are written atomically (temp file in
//! the target directory, then rename).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{Diffeo, TimeVelocity};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::spectral::MetricSpec;

/// Caps a parsed allocation: points per grid and slices per velocity file.
const MAX_POINTS: usize = 1 << 24;
const MAX_INTERVALS: usize = 4096;

/// Shortest round-trip decimal form, with a marker so "1" reads back as a
/// float. Shared by every text format so reruns are byte-identical.
pub fn fmt_f64(x: f64) -> String {
    let s = format!("{x}");
    if s.chars().all(|c| c.is_ascii_digit() || c == '-') {
        format!("{s}.0")
    } else {
        s
    }
}

/// Writes `bytes` to `path` atomically: temp file in the same directory,
/// fsync'd, then renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let mut tmp = file_name.to_os_string();
    tmp.push(".tmp");
    let tmp_path = match dir {
        Some(d) => d.join(&tmp),
        None => Path::new(&tmp).to_path_buf(),
    };
    fs::write(&tmp_path, bytes)?;
    fs::rename(&tmp_path, path)?;
    Ok(())
}

fn take_line<'a>(bytes: &'a [u8], what: &str) -> Result<(&'a str, &'a [u8])> {
    let n = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("{what}: missing newline-terminated header")))?;
    let line = std::str::from_utf8(&bytes[..n])
        .map_err(|_| Error::Format(format!("{what}: header is not UTF-8")))?;
    Ok((line, &bytes[n + 1..]))
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("bad {what}")))
}

fn parse_f64(tok: Option<&str>, what: &str) -> Result<f64> {
    let v = tok
        .ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("bad {what}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Format(format!("non-finite {what}")))
    }
}

fn parse_header(line: &str) -> Result<(GridSpec, usize)> {
    let mut toks = line.split_ascii_whitespace();
    if toks.next() != Some("SGF1") {
        return Err(Error::Format("expected SGF1 magic".into()));
    }
    let d = parse_usize(toks.next(), "dimension")?;
    if !(1..=2).contains(&d) {
        return Err(Error::Format(format!("unsupported dimension {d}")));
    }
    let mut sizes = Vec::with_capacity(d);
    for a in 0..d {
        let n = parse_usize(toks.next(), &format!("grid size {a}"))?;
        if n > MAX_POINTS {
            return Err(Error::Format(format!("grid size {n} too large")));
        }
        sizes.push(n);
    }
    if sizes.iter().product::<usize>() > MAX_POINTS {
        return Err(Error::Format("grid too large".into()));
    }
    let mut lengths = Vec::with_capacity(d);
    for a in 0..d {
        lengths.push(parse_f64(toks.next(), &format!("domain length {a}"))?);
    }
    let comps = parse_usize(toks.next(), "component count")?;
    if comps == 0 || comps > 2 {
        return Err(Error::Format(format!("unsupported component count {comps}")));
    }
    if toks.next().is_some() {
        return Err(Error::Format("trailing tokens in SGF1 header".into()));
    }
    let grid = GridSpec::new(&sizes, &lengths)
        .map_err(|e| Error::Format(format!("bad grid in header: {e}")))?;
    Ok((grid, comps))
}

fn read_blocks(bytes: &[u8], points: usize, blocks: usize) -> Result<Vec<Vec<f64>>> {
    let need = points
        .checked_mul(blocks)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("data section overflows".into()))?;
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "data section holds {} bytes, expected {need}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(blocks);
    let mut off = 0;
    for _ in 0..blocks {
        let mut plane = Vec::with_capacity(points);
        for _ in 0..points {
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format("non-finite value in data section".into()));
            }
            plane.push(v);
            off += 8;
        }
        out.push(plane);
    }
    Ok(out)
}

fn sgf_header(grid: &GridSpec, comps: usize) -> String {
    let mut line = format!("SGF1 {}", grid.dim());
    for n in grid.sizes() {
        line.push_str(&format!(" {n}"));
    }
    for l in grid.lengths() {
        line.push_str(&format!(" {}", fmt_f64(*l)));
    }
    line.push_str(&format!(" {comps}\n"));
    line
}

fn push_block(bytes: &mut Vec<u8>, plane: &[f64]) {
    for v in plane {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
}

/// Encodes planes of grid data as SGF1 bytes.
pub fn encode_sgf(grid: &GridSpec, planes: &[&[f64]]) -> Vec<u8> {
    let mut bytes = sgf_header(grid, planes.len()).into_bytes();
    for plane in planes {
        push_block(&mut bytes, plane);
    }
    bytes
}

/// Parses SGF1 bytes into a grid and its component planes.
pub fn parse_sgf(bytes: &[u8]) -> Result<(GridSpec, Vec<Vec<f64>>)> {
    let (line, rest) = take_line(bytes, "SGF1")?;
    let (grid, comps) = parse_header(line)?;
    let planes = read_blocks(rest, grid.points(), comps)?;
    Ok((grid, planes))
}

pub fn write_scalar_field(path: &Path, field: &ScalarField) -> Result<()> {
    atomic_write(path, &encode_sgf(field.grid(), &[field.values()]))
}

pub fn read_scalar_field(path: &Path) -> Result<ScalarField> {
    let (grid, mut planes) = parse_sgf(&fs::read(path)?)?;
    if planes.len() != 1 {
        return Err(Error::Format(format!(
            "expected 1 component in {}, found {}",
            path.display(),
            planes.len()
        )));
    }
    ScalarField::from_values(&grid, planes.pop().unwrap())
}

pub fn write_vector_field(path: &Path, field: &VectorField) -> Result<()> {
    let planes: Vec<&[f64]> = (0..field.grid().dim()).map(|a| field.component(a)).collect();
    atomic_write(path, &encode_sgf(field.grid(), &planes))
}

pub fn read_vector_field(path: &Path) -> Result<VectorField> {
    let (grid, planes) = parse_sgf(&fs::read(path)?)?;
    if planes.len() != grid.dim() {
        return Err(Error::Format(format!(
            "expected {} components in {}, found {}",
            grid.dim(),
            path.display(),
            planes.len()
        )));
    }
    VectorField::from_components(&grid, planes)
}

/// A diffeomorphism is stored as its displacement field; reading one
/// re-checks orientation, so a degenerate file is rejected.
pub fn write_diffeo(path: &Path, phi: &Diffeo) -> Result<()> {
    write_vector_field(path, phi.displacement())
}

pub fn read_diffeo(path: &Path) -> Result<Diffeo> {
    Diffeo::from_displacement(read_vector_field(path)?)
}

/// Encodes a time-dependent velocity: SGF1 header, TVEL1 line with the
/// metric order and time knots, then one block per component per slice.
pub fn encode_tvel(u: &TimeVelocity) -> Vec<u8> {
    let grid = u.grid();
    let mut head = sgf_header(grid, grid.dim());
    head.push_str(&format!("TVEL1 {}", fmt_f64(u.metric().order())));
    for t in u.time_grid() {
        head.push_str(&format!(" {}", fmt_f64(*t)));
    }
    head.push('\n');
    let mut bytes = head.into_bytes();
    for field in u.fields() {
        for a in 0..grid.dim() {
            push_block(&mut bytes, field.component(a));
        }
    }
    bytes
}

pub fn parse_tvel(bytes: &[u8]) -> Result<TimeVelocity> {
    let (line, rest) = take_line(bytes, "SGF1")?;
    let (grid, comps) = parse_header(line)?;
    if comps != grid.dim() {
        return Err(Error::Format(format!(
            "velocity file must have {} components, found {comps}",
            grid.dim()
        )));
    }
    let (tline, data) = take_line(rest, "TVEL1")?;
    let mut toks = tline.split_ascii_whitespace();
    if toks.next() != Some("TVEL1") {
        return Err(Error::Format("expected TVEL1 extension line".into()));
    }
    let order = parse_f64(toks.next(), "metric order")?;
    let mut time_grid = Vec::new();
    for tok in toks {
        if time_grid.len() > MAX_INTERVALS {
            return Err(Error::Format("too many time knots".into()));
        }
        time_grid.push(parse_f64(Some(tok), "time knot")?);
    }
    if time_grid.len() < 2 {
        return Err(Error::Format("TVEL1 needs at least two time knots".into()));
    }
    let slices = time_grid.len() - 1;
    let planes = read_blocks(data, grid.points(), slices * grid.dim())?;
    let metric = MetricSpec::new(&grid, order)
        .map_err(|e| Error::Format(format!("bad metric order: {e}")))?;
    let mut fields = Vec::with_capacity(slices);
    let mut it = planes.into_iter();
    for _ in 0..slices {
        let comps: Vec<Vec<f64>> = (0..grid.dim()).map(|_| it.next().unwrap()).collect();
        fields.push(VectorField::from_components(&grid, comps)?);
    }
    TimeVelocity::new(time_grid, fields, metric)
}

pub fn write_time_velocity(path: &Path, u: &TimeVelocity) -> Result<()> {
    atomic_write(path, &encode_tvel(u))
}

pub fn read_time_velocity(path: &Path) -> Result<TimeVelocity> {
    parse_tvel(&fs::read(path)?)
}

/// A parsed landmark file: positions and, when the p-columns are present,
/// momenta.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkFile {
    pub dim: usize,
    pub positions: Vec<[f64; 2]>,
    pub momenta: Option<Vec<[f64; 2]>>,
}

/// Parses landmark CSV: header `id,x1[,x2][,p1[,p2]]`, one row per landmark.
pub fn parse_landmarks(bytes: &[u8]) -> Result<LandmarkFile> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| Error::Format("landmark CSV is not UTF-8".into()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty landmark CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let (dim, with_momenta) = match cols.as_slice() {
        ["id", "x1"] => (1, false),
        ["id", "x1", "p1"] => (1, true),
        ["id", "x1", "x2"] => (2, false),
        ["id", "x1", "x2", "p1", "p2"] => (2, true),
        _ => {
            return Err(Error::Format(format!(
                "unrecognized landmark header: {header}"
            )))
        }
    };
    let mut positions = Vec::new();
    let mut momenta = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if positions.len() >= MAX_POINTS {
            return Err(Error::Format("too many landmarks".into()));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Format(format!(
                "landmark row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let mut q = [0.0; 2];
        for a in 0..dim {
            q[a] = parse_f64(Some(fields[1 + a]), "landmark coordinate")?;
        }
        positions.push(q);
        if with_momenta {
            let mut p = [0.0; 2];
            for a in 0..dim {
                p[a] = parse_f64(Some(fields[1 + dim + a]), "landmark momentum")?;
            }
            momenta.push(p);
        }
    }
    if positions.is_empty() {
        return Err(Error::Format("landmark CSV has no rows".into()));
    }
    Ok(LandmarkFile { dim, positions, momenta: if with_momenta { Some(momenta) } else { None } })
}

pub fn encode_landmarks(dim: usize, q: &[[f64; 2]], p: Option<&[[f64; 2]]>) -> String {
    let mut out = String::new();
    match (dim, p.is_some()) {
        (1, false) => out.push_str("id,x1\n"),
        (1, true) => out.push_str("id,x1,p1\n"),
        (2, false) => out.push_str("id,x1,x2\n"),
        _ => out.push_str("id,x1,x2,p1,p2\n"),
    }
    for (i, qi) in q.iter().enumerate() {
        out.push_str(&i.to_string());
        for a in 0..dim {
            out.push(',');
            out.push_str(&fmt_f64(qi[a]));
        }
        if let Some(p) = p {
            for a in 0..dim {
                out.push(',');
                out.push_str(&fmt_f64(p[i][a]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_landmarks(
    path: &Path,
    dim: usize,
    q: &[[f64; 2]],
    p: Option<&[[f64; 2]]>,
) -> Result<()> {
    atomic_write(path, encode_landmarks(dim, q, p).as_bytes())
}

/// CSV export of a scalar field: one row per grid point, coordinates then
/// the value.
pub fn scalar_field_csv(field: &ScalarField) -> String {
    let grid = field.grid();
    let mut out = String::from(if grid.dim() == 1 { "x1,value\n" } else { "x1,x2,value\n" });
    for i in 0..grid.points() {
        let node = grid.node(i);
        for a in 0..grid.dim() {
            out.push_str(&fmt_f64(node[a]));
            out.push(',');
        }
        out.push_str(&fmt_f64(field.values()[i]));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::MetricSpec;
    use std::f64::consts::TAU;

    #[test]
    fn scalar_field_roundtrips_bit_exactly() {
        let g = GridSpec::square(8, TAU).unwrap();
        let f = ScalarField::from_fn(&g, |p| (p[0] + 0.3).sin() * (2.0 * p[1]).cos());
        let bytes = encode_sgf(&g, &[f.values()]);
        let (g2, planes) = parse_sgf(&bytes).unwrap();
        assert_eq!(g2.sizes(), g.sizes());
        assert_eq!(planes[0], f.values());
        // writing again is byte-identical
        assert_eq!(bytes, encode_sgf(&g2, &[&planes[0]]));
    }

    #[test]
    fn velocity_roundtrips_bit_exactly() {
        let g = GridSpec::line(16, TAU).unwrap();
        let m = MetricSpec::new(&g, 2.0).unwrap();
        let f1 = VectorField::from_fn(&g, |p| [0.2 * p[0].sin(), 0.0]);
        let f2 = VectorField::from_fn(&g, |p| [0.1 * (2.0 * p[0]).cos(), 0.0]);
        let u = TimeVelocity::new(vec![0.0, 0.25, 1.0], vec![f1, f2], m).unwrap();
        let bytes = encode_tvel(&u);
        let back = parse_tvel(&bytes).unwrap();
        assert_eq!(back.time_grid(), u.time_grid());
        assert_eq!(back.metric().order(), 2.0);
        for (a, b) in back.fields().iter().zip(u.fields()) {
            assert_eq!(a.component(0), b.component(0));
        }
        assert_eq!(encode_tvel(&back), bytes);
    }

    #[test]
    fn malformed_files_are_rejected_not_panicked() {
        let cases: Vec<Vec<u8>> = vec![
            b"".to_vec(),
            b"SGF1".to_vec(),
            b"SGF1 1 16 6.28 1\n".to_vec(),                   // truncated data
            b"SGF1 3 4 4 4 1.0 1.0 1.0 1\n".to_vec(),         // bad dimension
            b"SGF1 1 999999999999 6.28 1\n".to_vec(),         // absurd size
            b"SGF1 1 16 nan 1\n".to_vec(),                    // bad length
            b"SGF1 1 16 6.28 1 extra\n".to_vec(),             // trailing tokens
            [b"SGF1 1 4 6.28 1\n".to_vec(), vec![0u8; 40]].concat(), // wrong length
        ];
        for bytes in cases {
            assert!(parse_sgf(&bytes).is_err());
        }
        assert!(parse_tvel(b"SGF1 1 4 6.28 1\nTVEL1 2.0 0.0\n").is_err());
        assert!(parse_landmarks(b"id,bogus\n0,1.0\n").is_err());
        assert!(parse_landmarks(b"id,x1\n").is_err());
    }

    #[test]
    fn landmarks_roundtrip() {
        let q = vec![[1.0, 2.0], [3.5, 0.25]];
        let p = vec![[0.1, -0.2], [0.0, 4.0]];
        let text = encode_landmarks(2, &q, Some(&p));
        let parsed = parse_landmarks(text.as_bytes()).unwrap();
        assert_eq!(parsed.dim, 2);
        assert_eq!(parsed.positions, q);
        assert_eq!(parsed.momenta.as_deref(), Some(&p[..]));
        assert_eq!(encode_landmarks(2, &parsed.positions, parsed.momenta.as_deref()), text);
    }

    #[test]
    fn atomic_write_replaces_content(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.sgf");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert!(!dir.path().join("field.sgf.tmp").exists());
    }
}
