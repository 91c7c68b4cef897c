//! Plain-text triangle meshes: `v x y z` and `f i j k` lines with 1-based
//! indices. Comments and the usual grouping keywords are skipped.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, MeshTopology};
use crate::error::{Error, Result};

pub fn save_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, to_obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn to_obj_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
    }
    for f in &mesh.topology.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tok = content.split_whitespace();
        let Some(key) = tok.next() else { continue };
        let rest: Vec<&str> = tok.collect();
        let err = |msg: String| Error::Parse { line, msg };
        match key {
            "v" => {
                if rest.len() != 3 {
                    return Err(err(format!("expected 3 coordinates, found {}", rest.len())));
                }
                let mut p = [0.0; 3];
                for (k, t) in rest.iter().enumerate() {
                    p[k] = t
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad coordinate '{t}'")))?;
                }
                positions.push(p);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(format!("only triangles are supported, found {} vertices", rest.len())));
                }
                let mut f = [0usize; 3];
                for (k, t) in rest.iter().enumerate() {
                    // accept `i/t/n` and keep the position index
                    let head = t.split('/').next().unwrap_or("");
                    let i: usize = head
                        .parse()
                        .ok()
                        .filter(|i| *i >= 1)
                        .ok_or_else(|| err(format!("bad vertex index '{t}'")))?;
                    f[k] = i - 1;
                }
                faces.push(f);
                face_lines.push(line);
            }
            "vn" | "vt" | "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(err(format!("unknown record '{other}'"))),
        }
    }
    if positions.is_empty() || faces.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: "mesh needs at least one vertex and one face".into(),
        });
    }
    for (f, line) in faces.iter().zip(&face_lines) {
        if let Some(v) = f.iter().find(|v| **v >= positions.len()) {
            return Err(Error::Parse {
                line: *line,
                msg: format!("vertex index {} exceeds vertex count {}", v + 1, positions.len()),
            });
        }
    }
    let topology = MeshTopology::from_faces(positions.len(), faces)?;
    Ok(Mesh {
        topology,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_disk_mesh;

    #[test]
    fn round_trip_preserves_mesh() {
        let m = generate_disk_mesh(0.15, 0.03).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disk.obj");
        save_obj(&m, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back.topology, m.topology);
        for (a, b) in back.positions.iter().zip(&m.positions) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn quad_face_is_rejected_with_line_number() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n# quad\nf 1 2 3 4\n";
        match parse_obj(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse_obj(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_coordinates_and_indices_are_reported() {
        assert!(matches!(
            parse_obj("v 0 0 x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n"),
            Err(Error::Parse { line: 4, .. })
        ));
    }
}
