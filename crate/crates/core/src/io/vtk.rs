//! Legacy-ASCII VTK point-cloud export.

use std::io::Write;

use super::{fmt_exact, IoError};
use crate::imaging::Frame;
use crate::ScalarField;

/// Write the valid records of `field` as a POLYDATA vertex cloud with one
/// scalar array, plus a `direction` vector array when every valid record
/// carries one. Positions are taken in `frame`.
pub fn export_point_cloud(
    w: &mut dyn Write,
    field: &ScalarField,
    frame: Frame,
) -> Result<usize, IoError> {
    let recs: Vec<_> = field.records.iter().filter(|r| r.valid).collect();
    let n = recs.len();
    let name: String = field
        .name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    let err = |e| IoError::io("write point cloud", e);
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(&format!("crackfield {} [{}]\n", name, field.unit.as_str()));
    out.push_str("ASCII\nDATASET POLYDATA\n");
    out.push_str(&format!("POINTS {n} double\n"));
    for r in &recs {
        let p = match frame {
            Frame::Reference => r.reference,
            Frame::Deformed => r.current,
        };
        out.push_str(&format!(
            "{} {} {}\n",
            fmt_exact(p.x),
            fmt_exact(p.y),
            fmt_exact(p.z)
        ));
    }
    out.push_str(&format!("VERTICES {n} {}\n", 2 * n));
    for i in 0..n {
        out.push_str(&format!("1 {i}\n"));
    }
    out.push_str(&format!(
        "POINT_DATA {n}\nSCALARS {} double 1\nLOOKUP_TABLE default\n",
        if name.is_empty() { "value" } else { &name }
    ));
    for r in &recs {
        out.push_str(&fmt_exact(r.value));
        out.push('\n');
    }
    if n > 0 && recs.iter().all(|r| r.direction.is_some()) {
        out.push_str("VECTORS direction double\n");
        for r in &recs {
            let d = r.direction.expect("checked");
            out.push_str(&format!(
                "{} {} {}\n",
                fmt_exact(d.x),
                fmt_exact(d.y),
                fmt_exact(d.z)
            ));
        }
    }
    w.write_all(out.as_bytes()).map_err(err)?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{FieldUnit, ScalarRecord, Vec3};

    #[test]
    fn writes_only_valid_points() {
        let rec = |id: u64, valid| ScalarRecord {
            particle_id: id,
            reference: Vec3::new(id as f64, 0.0, 0.0),
            current: Vec3::new(id as f64, 0.5, 0.0),
            value: 2.0 * id as f64,
            valid,
            direction: Some(Vec3::X),
        };
        let f = ScalarField::new(
            "lambda 1",
            FieldUnit::Dimensionless,
            vec![rec(1, true), rec(2, false), rec(3, true)],
        );
        let mut buf = Vec::new();
        assert_eq!(
            export_point_cloud(&mut buf, &f, Frame::Deformed).unwrap(),
            2
        );
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[4], "POINTS 2 double");
        assert_eq!(lines[5], "1 0.5 0");
        assert_eq!(lines[6], "3 0.5 0");
        assert_eq!(lines[7], "VERTICES 2 4");
        assert!(text.contains("SCALARS lambda_1 double 1\nLOOKUP_TABLE default\n2\n6\n"));
        assert!(text.ends_with("VECTORS direction double\n1 0 0\n1 0 0\n"));
    }
}
