//! Point-cloud files.
//!
//! Text: one point per line, whitespace-separated `x y z [label]`, `#` starts
//! a comment. Binary: magic `EPNC`, `u32` little-endian count, then `N×3`
//! little-endian `f64` coordinates.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::sampling::PointCloud;

pub const BINARY_MAGIC: &[u8; 4] = b"EPNC";

pub fn read_text<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Parse(format!(
                "line {}: expected `x y z [label]`, found {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let coord = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        points.push(Vec3::new(coord(fields[0])?, coord(fields[1])?, coord(fields[2])?));
        if let Some(label) = fields.get(3) {
            labels.push(
                label
                    .parse::<i64>()
                    .map_err(|e| Error::Parse(format!("line {}: label: {e}", lineno + 1)))?,
            );
        }
    }
    if !labels.is_empty() && labels.len() != points.len() {
        return Err(Error::Parse("labels must be given for every point or none".into()));
    }
    if labels.is_empty() {
        PointCloud::new(points)
    } else {
        PointCloud::with_labels(points, labels)
    }
}

pub fn write_text<W: Write>(cloud: &PointCloud, mut writer: W) -> Result<()> {
    for (i, p) in cloud.points.iter().enumerate() {
        match &cloud.labels {
            Some(labels) => writeln!(writer, "{:?} {:?} {:?} {}", p.x, p.y, p.z, labels[i])?,
            None => writeln!(writer, "{:?} {:?} {:?}", p.x, p.y, p.z)?,
        }
    }
    Ok(())
}

/// Labels are not part of the binary format and are dropped.
pub fn write_binary<W: Write>(cloud: &PointCloud, mut writer: W) -> Result<()> {
    let count = u32::try_from(cloud.len())
        .map_err(|_| Error::InvalidArgument("too many points for the binary format".into()))?;
    writer.write_all(BINARY_MAGIC)?;
    writer.write_all(&count.to_le_bytes())?;
    for p in &cloud.points {
        for v in p.to_array() {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<PointCloud> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse("missing EPNC magic".into()));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    let mut points = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        let mut xyz = [0.0; 3];
        for v in &mut xyz {
            reader.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        points.push(Vec3::from_array(xyz));
    }
    PointCloud::new(points)
}

/// True when the bytes start with the binary magic.
pub fn is_binary(bytes: &[u8]) -> bool {
    bytes.starts_with(BINARY_MAGIC)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_with_comments_and_labels() {
        let src = "# header\n0 0 0 1\n1.5 -2 3e-1 2 # trailing\n\n";
        let c = read_text(src.as_bytes()).unwrap();
        assert_eq!(c.points, vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.5, -2.0, 0.3)]);
        assert_eq!(c.labels, Some(vec![1, 2]));
    }

    #[test]
    fn malformed_text() {
        assert!(read_text("1 2\n".as_bytes()).is_err());
        assert!(read_text("1 2 x\n".as_bytes()).is_err());
        assert!(read_text("1 2 3 4\n1 2 3\n".as_bytes()).is_err());
        assert!(read_text("# nothing\n".as_bytes()).is_err());
    }

    #[test]
    fn binary_layout() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        let mut bytes = vec![];
        write_binary(&c, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"EPNC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 24);
        assert!(read_binary(&b"EPNX\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trips(pts in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6, -1e6f64..1e6), 1..40)) {
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect()).unwrap();
            let mut bin = vec![];
            write_binary(&cloud, &mut bin).unwrap();
            prop_assert_eq!(&read_binary(&bin[..]).unwrap(), &cloud);
            let mut txt = vec![];
            write_text(&cloud, &mut txt).unwrap();
            prop_assert_eq!(&read_text(&txt[..]).unwrap(), &cloud);
        }
    }
}
