//! Delimited text tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{fmt_exact, fmt_sig9, IoError};
use crate::fracture::{CtodProfile, CtodSample, Face, FacePoint, RegressionResult};
use crate::imaging::DetectedBlob;
use crate::kinematics::{
    build_particle_set, DefGradSample, ParticleSet, ParticleTrack, SampleStatus,
};
use crate::tensor3::{Mat3, Vec3};
use crate::{FieldUnit, ScalarField, ScalarRecord};

const POS: [&str; 7] = ["id", "Xx", "Xy", "Xz", "xx", "xy", "xz"];

struct Parsed {
    meta: BTreeMap<String, String>,
    header: Vec<String>,
    /// `(line number, fields)`.
    rows: Vec<(u64, Vec<String>)>,
}

fn read_all(r: &mut dyn Read) -> Result<String, IoError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| IoError::io("read table", e))?;
    let text = String::from_utf8(bytes).map_err(|e| IoError::Csv(format!("not UTF-8: {e}")))?;
    if let Some(pos) = text.find('\r') {
        let line = text[..pos].matches('\n').count() as u64 + 1;
        return Err(IoError::Record {
            line,
            message: "carriage return; tables use LF line endings".into(),
        });
    }
    Ok(text)
}

fn parse_table(
    r: &mut dyn Read,
    table: &'static str,
    meta_kind: Option<&str>,
) -> Result<Parsed, IoError> {
    let text = read_all(r)?;
    let mut body = text.as_str();
    let mut meta = BTreeMap::new();
    let mut offset = 0;
    if let Some(kind) = meta_kind {
        let (first, rest) = body.split_once('\n').unwrap_or((body, ""));
        let mut tokens = first.split_whitespace();
        if tokens.next() != Some("#") || tokens.next() != Some(kind) {
            return Err(IoError::Header {
                table,
                expected: format!("# {kind} ..."),
                found: first.to_string(),
            });
        }
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| IoError::Record {
                line: 1,
                message: format!("metadata token `{t}` is not key=value"),
            })?;
            meta.insert(k.to_string(), v.to_string());
        }
        body = rest;
        offset = 1;
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(body.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(IoError::Header {
            table,
            expected: "a header row".into(),
            found: String::new(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line()) + offset;
                rows.push((line, rec.iter().map(str::to_string).collect()));
            }
            Err(e) => {
                return Err(match e.kind() {
                    csv::ErrorKind::UnequalLengths {
                        pos,
                        expected_len,
                        len,
                    } => IoError::Arity {
                        line: pos.as_ref().map_or(0, |p| p.line()) + offset,
                        expected: *expected_len as usize,
                        got: *len as usize,
                    },
                    _ => IoError::Csv(e.to_string()),
                })
            }
        }
    }
    Ok(Parsed { meta, header, rows })
}

fn expect_header(table: &'static str, found: &[String], expected: &[&str]) -> Result<(), IoError> {
    if found
        .iter()
        .map(String::as_str)
        .eq(expected.iter().copied())
    {
        Ok(())
    } else {
        Err(IoError::Header {
            table,
            expected: expected.join(","),
            found: found.join(","),
        })
    }
}

fn field<T: std::str::FromStr>(line: u64, column: &str, value: &str) -> Result<T, IoError> {
    value.parse().map_err(|_| IoError::Field {
        line,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn meta_value<T: std::str::FromStr>(
    meta: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, IoError> {
    let v = meta.get(key).ok_or_else(|| IoError::Record {
        line: 1,
        message: format!("metadata key `{key}` missing"),
    })?;
    field(1, key, v)
}

/// Reads fields of one record in column order.
struct Cursor<'a> {
    line: u64,
    header: &'a [String],
    fields: &'a [String],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: u64, header: &'a [String], fields: &'a [String]) -> Self {
        Cursor {
            line,
            header,
            fields,
            at: 0,
        }
    }

    fn raw(&mut self) -> &'a str {
        let s = &self.fields[self.at];
        self.at += 1;
        s
    }

    fn next<T: std::str::FromStr>(&mut self) -> Result<T, IoError> {
        let col = &self.header[self.at];
        let v = self.raw();
        field(self.line, col, v)
    }

    fn vec3(&mut self) -> Result<Vec3, IoError> {
        Ok(Vec3::new(self.next()?, self.next()?, self.next()?))
    }
}

fn writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(e: csv::Error) -> IoError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => IoError::io("write table", e),
        k => IoError::Csv(format!("{k:?}")),
    }
}

fn finish(mut w: csv::Writer<&mut dyn Write>) -> Result<(), IoError> {
    w.flush().map_err(|e| IoError::io("write table", e))
}

fn push_vec3_sig9(out: &mut Vec<String>, v: Vec3) {
    out.extend([v.x, v.y, v.z].map(fmt_sig9));
}

fn meta_token(key: &str, value: &str) -> Result<String, IoError> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(IoError::Csv(format!(
            "metadata `{key}` must be nonempty without whitespace, got `{value}`"
        )));
    }
    Ok(format!("{key}={value}"))
}

fn write_line(w: &mut dyn Write, line: &str) -> Result<(), IoError> {
    writeln!(w, "{line}").map_err(|e| IoError::io("write table", e))
}

// ---------------------------------------------------------------------------
// Particle table

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRow {
    pub id: u64,
    pub reference: Vec3,
    pub current: Vec3,
    pub quality: Option<f64>,
    pub label: Option<String>,
}

/// `id,Xx,Xy,Xz,xx,xy,xz[,quality][,label]`, positions in µm with up to 9
/// significant digits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleTable {
    pub rows: Vec<ParticleRow>,
    pub has_quality: bool,
    pub has_label: bool,
}

impl ParticleTable {
    /// Tracks with their quality column, plus optional per-track labels.
    pub fn from_tracks(tracks: &[ParticleTrack], labels: Option<&[&str]>) -> Self {
        let rows = tracks
            .iter()
            .enumerate()
            .map(|(i, t)| ParticleRow {
                id: t.id,
                reference: t.reference,
                current: t.current,
                quality: Some(t.quality),
                label: labels.map(|l| l[i].to_string()),
            })
            .collect();
        ParticleTable {
            rows,
            has_quality: true,
            has_label: labels.is_some(),
        }
    }

    /// Quality defaults to 1 when the column is absent.
    pub fn to_tracks(&self) -> Vec<ParticleTrack> {
        self.rows
            .iter()
            .map(|r| ParticleTrack {
                quality: r.quality.unwrap_or(1.0),
                ..ParticleTrack::new(r.id, r.reference, r.current)
            })
            .collect()
    }

    pub fn to_set(&self) -> Result<ParticleSet, IoError> {
        Ok(build_particle_set(self.to_tracks())?)
    }

    pub fn labels(&self) -> Option<Vec<&str>> {
        self.has_label.then(|| {
            self.rows
                .iter()
                .map(|r| r.label.as_deref().unwrap_or(""))
                .collect()
        })
    }

    fn header(&self) -> Vec<&'static str> {
        let mut h = POS.to_vec();
        if self.has_quality {
            h.push("quality");
        }
        if self.has_label {
            h.push("label");
        }
        h
    }
}

pub fn write_particle_table(w: &mut dyn Write, t: &ParticleTable) -> Result<(), IoError> {
    let mut cw = writer(w);
    cw.write_record(t.header()).map_err(csv_err)?;
    for r in &t.rows {
        let mut rec = vec![r.id.to_string()];
        push_vec3_sig9(&mut rec, r.reference);
        push_vec3_sig9(&mut rec, r.current);
        if t.has_quality {
            rec.push(fmt_sig9(r.quality.unwrap_or(1.0)));
        }
        if t.has_label {
            rec.push(r.label.clone().unwrap_or_default());
        }
        cw.write_record(&rec).map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_particle_table(r: &mut dyn Read) -> Result<ParticleTable, IoError> {
    let p = parse_table(r, "particle table", None)?;
    let has_quality = p.header.get(7).is_some_and(|h| h == "quality");
    let has_label = p.header.last().is_some_and(|h| h == "label") && p.header.len() > 7;
    let t = ParticleTable {
        rows: Vec::new(),
        has_quality,
        has_label,
    };
    expect_header("particle table", &p.header, &t.header())?;
    let mut rows = Vec::with_capacity(p.rows.len());
    for (line, f) in &p.rows {
        let mut c = Cursor::new(*line, &p.header, f);
        let id = c.next()?;
        let reference = c.vec3()?;
        let current = c.vec3()?;
        let quality = if has_quality { Some(c.next()?) } else { None };
        let label = has_label.then(|| c.raw().to_string());
        rows.push(ParticleRow {
            id,
            reference,
            current,
            quality,
            label,
        });
    }
    Ok(ParticleTable { rows, ..t })
}

/// Detections as a particle table: both positions are the centroid and the
/// quality column carries the detection quality.
pub fn write_detections(w: &mut dyn Write, blobs: &[DetectedBlob]) -> Result<(), IoError> {
    let tracks: Vec<ParticleTrack> = blobs
        .iter()
        .enumerate()
        .map(|(i, b)| ParticleTrack {
            quality: b.quality,
            ..ParticleTrack::new(i as u64, b.centroid, b.centroid)
        })
        .collect();
    write_particle_table(w, &ParticleTable::from_tracks(&tracks, None))
}

/// Inverse of [`write_detections`]. Peak, response and diameter are not
/// stored and read back as 0.
pub fn read_detections(r: &mut dyn Read) -> Result<Vec<DetectedBlob>, IoError> {
    let t = read_particle_table(r)?;
    Ok(t.rows
        .iter()
        .map(|row| DetectedBlob {
            centroid: row.current,
            peak: 0.0,
            response: 0.0,
            diameter_um: 0.0,
            quality: row.quality.unwrap_or(1.0),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Deformation gradient table

const DEFGRAD_EXTRA: [&str; 13] = [
    "F11",
    "F12",
    "F13",
    "F21",
    "F22",
    "F23",
    "F31",
    "F32",
    "F33",
    "residual_rms_um",
    "n_neighbors",
    "condition",
    "status",
];

fn defgrad_header() -> Vec<&'static str> {
    POS.iter().chain(DEFGRAD_EXTRA.iter()).copied().collect()
}

/// F is written at full precision so that derived fields recompute exactly.
pub fn write_defgrad_table(w: &mut dyn Write, samples: &[DefGradSample]) -> Result<(), IoError> {
    let mut cw = writer(w);
    cw.write_record(defgrad_header()).map_err(csv_err)?;
    for s in samples {
        let mut rec = vec![s.particle_id.to_string()];
        push_vec3_sig9(&mut rec, s.reference);
        push_vec3_sig9(&mut rec, s.current);
        rec.extend(s.f.0.iter().flatten().map(|v| fmt_exact(*v)));
        rec.push(fmt_exact(s.residual_rms));
        rec.push(s.n_neighbors.to_string());
        rec.push(fmt_exact(s.condition));
        rec.push(s.status.as_str().to_string());
        cw.write_record(&rec).map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_defgrad_table(r: &mut dyn Read) -> Result<Vec<DefGradSample>, IoError> {
    let p = parse_table(r, "deformation gradient table", None)?;
    expect_header("deformation gradient table", &p.header, &defgrad_header())?;
    let mut out = Vec::with_capacity(p.rows.len());
    for (line, f) in &p.rows {
        let mut c = Cursor::new(*line, &p.header, f);
        let id = c.next()?;
        let reference = c.vec3()?;
        let current = c.vec3()?;
        let mut m = [[0.0; 3]; 3];
        for row in &mut m {
            for v in row.iter_mut() {
                *v = c.next()?;
            }
        }
        let residual = c.next()?;
        let n_neighbors = c.next()?;
        let condition = c.next()?;
        let status_text = c.raw();
        let status = SampleStatus::parse(status_text).ok_or_else(|| IoError::Field {
            line: *line,
            column: "status".into(),
            value: status_text.into(),
        })?;
        out.push(DefGradSample::from_stored(
            id,
            reference,
            current,
            Mat3(m),
            residual,
            n_neighbors,
            condition,
            status,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scalar field table

const SCALAR_COLS: [&str; 2] = ["value", "valid"];
const DIR_COLS: [&str; 3] = ["dx", "dy", "dz"];

fn scalar_header(with_dir: bool) -> Vec<&'static str> {
    let mut h: Vec<&str> = POS.iter().chain(SCALAR_COLS.iter()).copied().collect();
    if with_dir {
        h.extend(DIR_COLS);
    }
    h
}

/// `# scalar-field name=<name> unit=<unit>` then
/// `id,Xx,Xy,Xz,xx,xy,xz,value,valid[,dx,dy,dz]`. Values at full precision.
pub fn write_scalar_field(w: &mut dyn Write, field: &ScalarField) -> Result<(), IoError> {
    write_line(
        w,
        &format!(
            "# scalar-field {} {}",
            meta_token("name", &field.name)?,
            meta_token("unit", field.unit.as_str())?
        ),
    )?;
    let with_dir = field.records.iter().any(|r| r.direction.is_some());
    let mut cw = writer(w);
    cw.write_record(scalar_header(with_dir)).map_err(csv_err)?;
    for r in &field.records {
        let mut rec = vec![r.particle_id.to_string()];
        push_vec3_sig9(&mut rec, r.reference);
        push_vec3_sig9(&mut rec, r.current);
        rec.push(fmt_exact(r.value));
        rec.push(if r.valid { "1" } else { "0" }.to_string());
        if with_dir {
            match r.direction {
                Some(d) => rec.extend([d.x, d.y, d.z].map(fmt_exact)),
                None => rec.extend(["", "", ""].map(String::from)),
            }
        }
        cw.write_record(&rec).map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_scalar_field(r: &mut dyn Read) -> Result<ScalarField, IoError> {
    let p = parse_table(r, "scalar field", Some("scalar-field"))?;
    let name: String = meta_value(&p.meta, "name")?;
    let unit_text: String = meta_value(&p.meta, "unit")?;
    let unit = FieldUnit::parse(&unit_text).ok_or_else(|| IoError::Field {
        line: 1,
        column: "unit".into(),
        value: unit_text.clone(),
    })?;
    let with_dir = p.header.len() > POS.len() + SCALAR_COLS.len();
    expect_header("scalar field", &p.header, &scalar_header(with_dir))?;
    let mut records = Vec::with_capacity(p.rows.len());
    for (line, f) in &p.rows {
        let mut c = Cursor::new(*line, &p.header, f);
        let particle_id = c.next()?;
        let reference = c.vec3()?;
        let current = c.vec3()?;
        let value = c.next()?;
        let valid = match c.raw() {
            "1" => true,
            "0" => false,
            v => {
                return Err(IoError::Field {
                    line: *line,
                    column: "valid".into(),
                    value: v.into(),
                })
            }
        };
        let direction = if with_dir && !f[POS.len() + 2].is_empty() {
            Some(c.vec3()?)
        } else {
            None
        };
        records.push(ScalarRecord {
            particle_id,
            reference,
            current,
            value,
            valid,
            direction,
        });
    }
    Ok(ScalarField::new(name, unit, records))
}

// ---------------------------------------------------------------------------
// Crack faces

/// Deformed-configuration crack-face points and the tip they are measured
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTable {
    pub tip: Vec3,
    pub points: Vec<FacePoint>,
}

/// `# crack-faces tip_x_um=.. tip_y_um=.. tip_z_um=..` then `face,x,y,z`.
pub fn write_faces(w: &mut dyn Write, t: &FaceTable) -> Result<(), IoError> {
    write_line(
        w,
        &format!(
            "# crack-faces tip_x_um={} tip_y_um={} tip_z_um={}",
            fmt_exact(t.tip.x),
            fmt_exact(t.tip.y),
            fmt_exact(t.tip.z)
        ),
    )?;
    let mut cw = writer(w);
    cw.write_record(["face", "x", "y", "z"]).map_err(csv_err)?;
    for p in &t.points {
        let v = p.position;
        cw.write_record([
            p.face.as_str().to_string(),
            fmt_exact(v.x),
            fmt_exact(v.y),
            fmt_exact(v.z),
        ])
        .map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_faces(r: &mut dyn Read) -> Result<FaceTable, IoError> {
    let p = parse_table(r, "crack faces", Some("crack-faces"))?;
    let tip = Vec3::new(
        meta_value(&p.meta, "tip_x_um")?,
        meta_value(&p.meta, "tip_y_um")?,
        meta_value(&p.meta, "tip_z_um")?,
    );
    expect_header("crack faces", &p.header, &["face", "x", "y", "z"])?;
    let mut points = Vec::with_capacity(p.rows.len());
    for (line, f) in &p.rows {
        let mut c = Cursor::new(*line, &p.header, f);
        let text = c.raw();
        let face = Face::parse(text).ok_or_else(|| IoError::Field {
            line: *line,
            column: "face".into(),
            value: text.into(),
        })?;
        points.push(FacePoint {
            face,
            position: c.vec3()?,
        });
    }
    Ok(FaceTable { tip, points })
}

// ---------------------------------------------------------------------------
// CTOD profile

/// `# ctod-profile [label=..]` then `r_um,delta_um`.
pub fn write_ctod_profile(w: &mut dyn Write, profile: &CtodProfile) -> Result<(), IoError> {
    let head = if profile.label.is_empty() {
        "# ctod-profile".to_string()
    } else {
        format!("# ctod-profile {}", meta_token("label", &profile.label)?)
    };
    write_line(w, &head)?;
    let mut cw = writer(w);
    cw.write_record(["r_um", "delta_um"]).map_err(csv_err)?;
    for s in &profile.samples {
        cw.write_record([fmt_exact(s.r_um), fmt_exact(s.delta_um)])
            .map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_ctod_profile(r: &mut dyn Read) -> Result<CtodProfile, IoError> {
    let p = parse_table(r, "CTOD profile", Some("ctod-profile"))?;
    expect_header("CTOD profile", &p.header, &["r_um", "delta_um"])?;
    let mut samples = Vec::with_capacity(p.rows.len());
    for (line, f) in &p.rows {
        let mut c = Cursor::new(*line, &p.header, f);
        samples.push(CtodSample {
            r_um: c.next()?,
            delta_um: c.next()?,
        });
    }
    Ok(CtodProfile {
        label: p.meta.get("label").cloned().unwrap_or_default(),
        samples,
    })
}

// ---------------------------------------------------------------------------
// Regression

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPoint {
    pub label: String,
    pub e_lig_j: f64,
    pub g_c_j_per_m2: f64,
}

pub fn write_regression_points(
    w: &mut dyn Write,
    points: &[RegressionPoint],
) -> Result<(), IoError> {
    let mut cw = writer(w);
    cw.write_record(["label", "e_lig_j", "g_c_j_per_m2"])
        .map_err(csv_err)?;
    for p in points {
        cw.write_record([
            p.label.clone(),
            fmt_exact(p.e_lig_j),
            fmt_exact(p.g_c_j_per_m2),
        ])
        .map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_regression_points(r: &mut dyn Read) -> Result<Vec<RegressionPoint>, IoError> {
    let p = parse_table(r, "regression points", None)?;
    expect_header(
        "regression points",
        &p.header,
        &["label", "e_lig_j", "g_c_j_per_m2"],
    )?;
    p.rows
        .iter()
        .map(|(line, f)| {
            let mut c = Cursor::new(*line, &p.header, f);
            Ok(RegressionPoint {
                label: c.raw().to_string(),
                e_lig_j: c.next()?,
                g_c_j_per_m2: c.next()?,
            })
        })
        .collect()
}

/// `quantity,value` table.
pub fn write_key_values(w: &mut dyn Write, rows: &[(&str, f64)]) -> Result<(), IoError> {
    let mut cw = writer(w);
    cw.write_record(["quantity", "value"]).map_err(csv_err)?;
    for (k, v) in rows {
        cw.write_record([k.to_string(), fmt_exact(*v)])
            .map_err(csv_err)?;
    }
    finish(cw)
}

pub fn read_key_values(r: &mut dyn Read) -> Result<BTreeMap<String, f64>, IoError> {
    let p = parse_table(r, "key-value table", None)?;
    expect_header("key-value table", &p.header, &["quantity", "value"])?;
    p.rows
        .iter()
        .map(|(line, f)| {
            let mut c = Cursor::new(*line, &p.header, f);
            let k = c.raw().to_string();
            Ok((k, c.next()?))
        })
        .collect()
}

/// Two tables: the fit summary (`quantity,value`: `slope_per_m2`,
/// `intercept_j_per_m2`, `r_squared`, `n_points`) and plot data
/// (`kind,e_lig_j,g_c_j_per_m2`, measured points followed by 50 samples of
/// the fitted line over the data range).
pub fn write_regression(
    summary: &mut dyn Write,
    plot: &mut dyn Write,
    points: &[RegressionPoint],
    fit: &RegressionResult,
) -> Result<(), IoError> {
    write_key_values(
        summary,
        &[
            ("slope_per_m2", fit.slope),
            ("intercept_j_per_m2", fit.intercept),
            ("r_squared", fit.r_squared),
            ("n_points", fit.n_points as f64),
        ],
    )?;
    let mut cw = writer(plot);
    cw.write_record(["kind", "e_lig_j", "g_c_j_per_m2"])
        .map_err(csv_err)?;
    for p in points {
        cw.write_record([
            "point".to_string(),
            fmt_exact(p.e_lig_j),
            fmt_exact(p.g_c_j_per_m2),
        ])
        .map_err(csv_err)?;
    }
    let lo = points
        .iter()
        .map(|p| p.e_lig_j)
        .fold(f64::INFINITY, f64::min);
    let hi = points
        .iter()
        .map(|p| p.e_lig_j)
        .fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        for i in 0..50 {
            let e = lo + (hi - lo) * i as f64 / 49.0;
            cw.write_record(["fit".to_string(), fmt_exact(e), fmt_exact(fit.predict(e))])
                .map_err(csv_err)?;
        }
    }
    finish(cw)
}
