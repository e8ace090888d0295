//! Plain-text mesh format.
//!
//! ```text
//! <dim> <nodes> <elements> <facets>
//! <i> <x> <y> [<z>]                 one line per node
//! <i> <v0> <v1> <v2> [<v3>]         one line per element
//! <i> <v0> <v1> [<v2>] <label>      one line per boundary facet, label -1 if none
//! ```
//!
//! Coordinates are written with 17 significant digits.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{facet_key, Mesh};
use crate::error::{Error, Result};

pub fn write_mesh<W: Write>(mut w: W, mesh: &Mesh, labels: &[i64]) -> Result<()> {
    if labels.len() != mesh.num_facets() {
        return Err(Error::Shape {
            what: "facet labels",
            expected: mesh.num_facets(),
            got: labels.len(),
        });
    }
    writeln!(
        w,
        "{} {} {} {}",
        mesh.dim(),
        mesh.num_nodes(),
        mesh.num_elements(),
        mesh.num_facets()
    )?;
    for i in 0..mesh.num_nodes() {
        write!(w, "{i}")?;
        for x in mesh.node(i) {
            write!(w, " {x:.16e}")?;
        }
        writeln!(w)?;
    }
    for e in 0..mesh.num_elements() {
        write!(w, "{e}")?;
        for v in mesh.element(e) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    for f in 0..mesh.num_facets() {
        write!(w, "{f}")?;
        for v in mesh.facet(f) {
            write!(w, " {v}")?;
        }
        writeln!(w, " {}", labels[f])?;
    }
    Ok(())
}

/// Reads a mesh and its facet labels. Boundary facets are rebuilt from the
/// elements and the file's facet table must describe the same set.
pub fn read_mesh<R: BufRead>(r: R) -> Result<(Mesh, Vec<i64>)> {
    let mut lines = r
        .lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#')));
    let mut next = |what: &str| -> Result<Vec<String>> {
        match lines.next() {
            Some(line) => Ok(line?.split_whitespace().map(str::to_owned).collect()),
            None => Err(Error::Parse(format!("unexpected end of file reading {what}"))),
        }
    };
    let header = next("header")?;
    let counts: Vec<usize> = header
        .iter()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header field {t:?}"))))
        .collect::<Result<_>>()?;
    let [dim, n_nodes, n_elems, n_facets] = counts[..] else {
        return Err(Error::Parse("header must have four counts".into()));
    };
    if dim != 2 && dim != 3 {
        return Err(Error::Parse(format!("unsupported dimension {dim}")));
    }

    let mut coords = Vec::with_capacity(n_nodes * dim);
    for i in 0..n_nodes {
        let rec = next("node")?;
        if rec.len() != dim + 1 {
            return Err(Error::Parse(format!("node record {i} has {} fields", rec.len())));
        }
        for t in &rec[1..] {
            coords.push(parse::<f64>(t)?);
        }
    }
    let mut elements = Vec::with_capacity(n_elems * (dim + 1));
    for e in 0..n_elems {
        let rec = next("element")?;
        if rec.len() != dim + 2 {
            return Err(Error::Parse(format!("element record {e} has {} fields", rec.len())));
        }
        for t in &rec[1..] {
            elements.push(parse::<usize>(t)?);
        }
    }
    let mesh = Mesh::new(dim, coords, elements)?;
    if mesh.num_facets() != n_facets {
        return Err(Error::Parse(format!(
            "file lists {n_facets} boundary facets, elements define {}",
            mesh.num_facets()
        )));
    }
    let index: HashMap<[usize; 3], usize> = (0..mesh.num_facets())
        .map(|f| (facet_key(mesh.facet(f)), f))
        .collect();
    let mut labels = vec![-1; n_facets];
    for k in 0..n_facets {
        let rec = next("facet")?;
        if rec.len() != dim + 2 {
            return Err(Error::Parse(format!("facet record {k} has {} fields", rec.len())));
        }
        let nodes: Vec<usize> = rec[1..=dim].iter().map(|t| parse(t)).collect::<Result<_>>()?;
        let f = *index
            .get(&facet_key(&nodes))
            .ok_or_else(|| Error::Parse(format!("facet record {k} is not on the boundary")))?;
        labels[f] = parse::<i64>(&rec[dim + 1])?;
    }
    Ok((mesh, labels))
}

fn parse<T: std::str::FromStr>(t: &str) -> Result<T> {
    t.parse().map_err(|_| Error::Parse(format!("cannot parse {t:?}")))
}
