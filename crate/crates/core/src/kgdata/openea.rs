use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{Kg, KgPair, Link, LinkSplit};

/// Directory holding the five 70/20/10 folds.
pub const FOLD_ROOT: &str = "721_5fold";

pub fn fold_dir(root: &Path, fold: usize) -> PathBuf {
    root.join(FOLD_ROOT).join(fold.to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Tab-separated records with exactly `n` fields; blank lines are skipped.
fn records<'a>(path: &'a Path, text: &'a str, n: usize) -> impl Iterator<Item = Result<Vec<&'a str>>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(move |(i, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != n {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: format!("expected {n} tab-separated fields, found {}", fields.len()),
                });
            }
            Ok(fields)
        })
}

fn load_triples(path: &Path) -> Result<Kg> {
    let text = read(path)?;
    let mut kg = Kg::new();
    for rec in records(path, &text, 3) {
        let f = rec?;
        kg.add_triple_uris(f[0], f[1], f[2]);
    }
    Ok(kg)
}

fn load_links(path: &Path, kg1: &mut Kg, kg2: &mut Kg) -> Result<Vec<Link>> {
    let text = read(path)?;
    records(path, &text, 2)
        .map(|rec| rec.map(|f| (kg1.intern_entity(f[0]), kg2.intern_entity(f[1]))))
        .collect()
}

/// Loads an OpenEA dataset directory with the link split of `fold`.
///
/// Entity and relation ids follow first appearance: triples of each graph
/// first, then `ent_links`, then the fold's link files.
pub fn load_openea(dir: &Path, fold: usize) -> Result<KgPair> {
    let mut kg1 = load_triples(&dir.join("rel_triples_1"))?;
    let mut kg2 = load_triples(&dir.join("rel_triples_2"))?;
    load_links(&dir.join("ent_links"), &mut kg1, &mut kg2)?;
    let fd = fold_dir(dir, fold);
    if !fd.is_dir() {
        return Err(Error::io(
            fd,
            std::io::Error::new(std::io::ErrorKind::NotFound, "fold directory missing"),
        ));
    }
    let split = LinkSplit {
        train: load_links(&fd.join("train_links"), &mut kg1, &mut kg2)?,
        valid: load_links(&fd.join("valid_links"), &mut kg1, &mut kg2)?,
        test: load_links(&fd.join("test_links"), &mut kg1, &mut kg2)?,
    };
    KgPair::new(kg1, kg2, split)
}

fn triples_text(kg: &Kg) -> String {
    let mut s = String::new();
    for t in kg.triples() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            kg.entity_uri(t.head).expect("valid id"),
            kg.relation_uri(t.relation).expect("valid id"),
            kg.entity_uri(t.tail).expect("valid id"),
        );
    }
    s
}

fn links_text(pair: &KgPair, links: &[Link]) -> String {
    let mut s = String::new();
    for &(a, b) in links {
        let _ = writeln!(
            s,
            "{}\t{}",
            pair.kg1.entity_uri(a).expect("valid id"),
            pair.kg2.entity_uri(b).expect("valid id"),
        );
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `pair` in OpenEA layout. `folds[k]` becomes fold `k + 1`; when
/// `folds` is empty the pair's own split is written as fold 1.
pub fn write_openea(pair: &KgPair, dir: &Path, folds: &[LinkSplit]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("rel_triples_1"), &triples_text(&pair.kg1))?;
    write(&dir.join("rel_triples_2"), &triples_text(&pair.kg2))?;
    let mut all = pair.all_links();
    all.sort_unstable();
    write(&dir.join("ent_links"), &links_text(pair, &all))?;

    let own = [pair.split()];
    let folds = if folds.is_empty() { &own[..] } else { folds };
    for (k, split) in folds.iter().enumerate() {
        let fd = fold_dir(dir, k + 1);
        fs::create_dir_all(&fd).map_err(|e| Error::io(&fd, e))?;
        write(&fd.join("train_links"), &links_text(pair, &split.train))?;
        write(&fd.join("valid_links"), &links_text(pair, &split.valid))?;
        write(&fd.join("test_links"), &links_text(pair, &split.test))?;
    }
    Ok(())
}
