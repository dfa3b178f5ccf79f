//! ASCII PLY for bare xyz clouds.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{PointCloud, Vec3};

pub fn to_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 40);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in cloud.points() {
        // `Display` for f64 is the shortest string that parses back exactly.
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn write(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, to_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn parse(text: &str, origin: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(origin, "missing end_header"))?
            .trim();
        match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["ply"] | ["comment", ..] | [] => {}
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => {
                return Err(Error::format(origin, format!("unsupported format {other}")))
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| {
                    Error::format(origin, format!("bad vertex count {n:?}"))
                })?)
            }
            ["element", ..] => {}
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(Error::format(origin, format!("unexpected header line {line:?}"))),
        }
    }
    let n = count.ok_or_else(|| Error::format(origin, "no vertex element"))?;
    let axis = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::format(origin, format!("missing property {name}")))
    };
    let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
    let mut pts = Vec::with_capacity(n);
    for (i, line) in lines.take(n).enumerate() {
        let vals = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("{origin}:vertex[{i}]"), e.to_string()))?;
        if vals.len() != props.len() {
            return Err(Error::format(
                format!("{origin}:vertex[{i}]"),
                format!("expected {} values, found {}", props.len(), vals.len()),
            ));
        }
        pts.push(Vec3::new(vals[ix], vals[iy], vals[iz]));
    }
    if pts.len() != n {
        return Err(Error::format(
            origin,
            format!("expected {n} vertices, found {}", pts.len()),
        ));
    }
    PointCloud::new(pts)
}

pub fn read(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let c = PointCloud::new(vec![Vec3::new(0.1, -2.0, 3.5)]).unwrap();
        assert_eq!(
            to_string(&c),
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
             property float z\nend_header\n0.1 -2 3.5\n"
        );
    }

    #[test]
    fn exact_round_trip() {
        let c = PointCloud::new(vec![
            Vec3::new(0.1 + 0.2, 1.0 / 3.0, -1e-17),
            Vec3::new(std::f64::consts::PI, 0.0, 12345.678),
        ])
        .unwrap();
        assert_eq!(parse(&to_string(&c), "mem").unwrap(), c);
    }

    #[test]
    fn truncated_file_rejected() {
        let c = PointCloud::new(vec![Vec3::zeros(), Vec3::x()]).unwrap();
        let s = to_string(&c);
        let cut = &s[..s.len() - 6];
        assert!(matches!(parse(cut, "mem"), Err(Error::Format { .. })));
    }
}
