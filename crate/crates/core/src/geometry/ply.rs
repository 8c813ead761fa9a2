use std::io::Write;

use crate::linalg::Vec3;
use crate::{Real, Result};

/// One exported canonical point. Colors are in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyPoint<T> {
    pub position: Vec3<T>,
    pub normal: Vec3<T>,
    pub color: Vec3<T>,
    pub generation: u32,
    pub visible: bool,
}

/// ASCII PLY with position, normal, 8-bit color, generation and visibility.
pub fn write_ply<T: Real>(w: &mut impl Write, points: &[PlyPoint<T>]) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property float {p}")?;
    }
    for p in ["red", "green", "blue"] {
        writeln!(w, "property uchar {p}")?;
    }
    writeln!(w, "property uint generation")?;
    writeln!(w, "property uchar visible")?;
    writeln!(w, "end_header")?;
    for p in points {
        let c = p.color.map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {}",
            p.position[0],
            p.position[1],
            p.position[2],
            p.normal[0],
            p.normal[1],
            p.normal[2],
            c[0],
            c[1],
            c[2],
            p.generation,
            u8::from(p.visible)
        )?;
    }
    Ok(())
}
