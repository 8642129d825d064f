//! Object and scene concepts: filtering of generated candidate phrases and
//! soft pseudo labels from dual-encoder embeddings.
//!
//! Candidate lists are produced upstream by querying a language model once
//! per action class with the templates below; the engine only consumes the
//! resulting JSON (`{ "<class name>": ["phrase", ...], ... }`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptKind, ConceptLabelsMeta};
use crate::error::{invalid, Error, Result};
use crate::ingest::manifest::DatasetManifest;
use crate::ingest::tensor::{read_matrix, write_matrix};

/// Query template for object candidates; `<action class>` is replaced by
/// the class name.
pub const OBJECT_PROMPT: &str = "For the <action class>, list the most important physical objects that commonly appear when this action occurs.";
/// Query template for scene candidates.
pub const SCENE_PROMPT: &str = "List the most common places or background scenes where <action class> typically occurs. Do not include objects or equipment";

pub fn render_prompt(kind: ConceptKind, class_name: &str) -> Option<String> {
    let template = match kind {
        ConceptKind::Object => OBJECT_PROMPT,
        ConceptKind::Scene => SCENE_PROMPT,
        ConceptKind::Motion => return None,
    };
    Some(template.replace("<action class>", class_name))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptFilterParams {
    pub max_words: usize,
    /// Drop a candidate whose cosine with an already kept one exceeds this.
    pub dup_sim: f64,
    /// Drop a candidate whose cosine with any class name exceeds this.
    pub class_sim: f64,
}

impl Default for ConceptFilterParams {
    fn default() -> Self {
        ConceptFilterParams {
            max_words: 4,
            dup_sim: 0.9,
            class_sim: 0.85,
        }
    }
}

pub trait TextEmbedder {
    fn embed(&self, text: &str) -> Option<Array1<f64>>;
}

impl<F> TextEmbedder for F
where
    F: Fn(&str) -> Option<Array1<f64>>,
{
    fn embed(&self, text: &str) -> Option<Array1<f64>> {
        self(text)
    }
}

/// Precomputed text embeddings keyed by normalized phrase.
///
/// Stored as a DTF1 matrix `emb.dtf` plus `emb.vocab.json`, a JSON list of
/// phrases aligned with the matrix rows.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

pub fn vocab_path(embeddings_path: &Path) -> PathBuf {
    embeddings_path.with_extension("vocab.json")
}

impl EmbeddingTable {
    pub fn new(phrases: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if phrases.len() != vectors.nrows() {
            return Err(invalid!(
                "{} vocabulary entries for {} embedding rows",
                phrases.len(),
                vectors.nrows()
            ));
        }
        let mut index = HashMap::with_capacity(phrases.len());
        for (i, p) in phrases.into_iter().enumerate() {
            index.entry(normalize_phrase(&p)).or_insert(i);
        }
        Ok(EmbeddingTable { index, vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let vectors = read_matrix(path)?;
        let vpath = vocab_path(path);
        let text = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
        let phrases: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::json(&vpath, e))?;
        EmbeddingTable::new(phrases, vectors)
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

impl TextEmbedder for EmbeddingTable {
    fn embed(&self, text: &str) -> Option<Array1<f64>> {
        self.index
            .get(&normalize_phrase(text))
            .map(|&i| self.vectors.row(i).to_owned())
    }
}

pub fn normalize_phrase(s: &str) -> String {
    s.trim().to_lowercase()
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextConceptSet {
    pub kind: ConceptKind,
    pub names: Vec<String>,
    /// `M x D_e`, unit-norm rows aligned with `names`.
    pub embedding: Array2<f64>,
}

impl ContextConceptSet {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Merges per-class candidate lists and removes long phrases, phrases too
/// close to a class name, and near-duplicates (greedily, in input order).
///
/// `candidates[c]` holds the phrases generated for `class_names[c]`.
pub fn filter_concepts(
    candidates: &[Vec<String>],
    class_names: &[String],
    params: &ConceptFilterParams,
    kind: ConceptKind,
    embedder: &dyn TextEmbedder,
) -> Result<ContextConceptSet> {
    for (name, t) in [("dup_sim", params.dup_sim), ("class_sim", params.class_sim)] {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("{name} must be in (0, 1], got {t}")));
        }
    }
    let lookup = |text: &str| {
        embedder
            .embed(text)
            .ok_or_else(|| invalid!("no text embedding for {text:?}"))
    };

    let mut seen = HashSet::new();
    let union: Vec<String> = candidates
        .iter()
        .flatten()
        .map(|c| normalize_phrase(c))
        .filter(|c| !c.is_empty() && seen.insert(c.clone()))
        .collect();

    let short: Vec<String> = union
        .into_iter()
        .filter(|c| c.split_whitespace().count() <= params.max_words)
        .collect();

    let class_vecs = class_names
        .iter()
        .map(|c| lookup(&normalize_phrase(c)))
        .collect::<Result<Vec<_>>>()?;
    let mut distinct = Vec::new();
    for c in short {
        let v = lookup(&c)?;
        if class_vecs.iter().all(|k| cosine(v.view(), k.view()) <= params.class_sim) {
            distinct.push((c, v));
        }
    }

    let mut names = Vec::new();
    let mut rows: Vec<Array1<f64>> = Vec::new();
    for (c, v) in distinct {
        if rows.iter().all(|r| cosine(v.view(), r.view()) <= params.dup_sim) {
            names.push(c);
            rows.push(unit(v));
        }
    }
    if names.is_empty() {
        return Err(Error::EmptyConceptSet(format!("{kind} candidates")));
    }
    let dim = rows[0].len();
    let mut embedding = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in embedding.rows_mut().into_iter().zip(&rows) {
        if src.len() != dim {
            return Err(invalid!("text embeddings have inconsistent dimensions"));
        }
        dst.assign(src);
    }
    Ok(ContextConceptSet {
        kind,
        names,
        embedding,
    })
}

/// Similarity of each video embedding with each concept embedding.
///
/// Video rows are L2-normalized first. With `clamp`, negative similarities
/// are set to zero.
pub fn pseudo_labels(
    concepts: &ContextConceptSet,
    video_embeddings: &Array2<f64>,
    clamp: bool,
) -> Result<Array2<f64>> {
    if video_embeddings.ncols() != concepts.embedding.ncols() {
        return Err(invalid!(
            "video embeddings have dimension {}, concept embeddings {}",
            video_embeddings.ncols(),
            concepts.embedding.ncols()
        ));
    }
    let mut v = video_embeddings.clone();
    for mut row in v.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    let mut labels = v.dot(&concepts.embedding.t());
    if clamp {
        labels.mapv_inplace(|x| x.max(0.0));
    }
    Ok(labels)
}

/// Reads a candidate JSON and orders its lists by `class_names`. Classes
/// without an entry get no candidates; unknown class keys are an error.
pub fn load_candidates(path: &Path, class_names: &[String]) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let out = class_names
        .iter()
        .map(|c| map.remove(c).unwrap_or_default())
        .collect();
    if let Some(unknown) = map.keys().next() {
        return Err(invalid!("{}: unknown class {unknown:?}", path.display()));
    }
    Ok(out)
}

/// Filters candidates and pseudo-labels every manifest video.
pub fn run_context_labeling(
    manifest: &DatasetManifest,
    kind: ConceptKind,
    candidates_path: &Path,
    embeddings: &EmbeddingTable,
    params: &ConceptFilterParams,
    clamp: bool,
) -> Result<(ContextConceptSet, Array2<f64>)> {
    if kind == ConceptKind::Motion {
        return Err(Error::Config("context labeling needs kind object or scene".into()));
    }
    let candidates = load_candidates(candidates_path, manifest.class_names())?;
    let set = filter_concepts(&candidates, manifest.class_names(), params, kind, embeddings)?;
    let videos = manifest.load_vlm_embeddings(&manifest.all_rows())?;
    let labels = pseudo_labels(&set, &videos, clamp)?;
    Ok((set, labels))
}

pub fn write_context_labels(
    manifest: &DatasetManifest,
    set: &ContextConceptSet,
    labels: &Array2<f64>,
    labels_path: &Path,
) -> Result<()> {
    write_matrix(labels_path, labels)?;
    ConceptLabelsMeta {
        kind: set.kind,
        names: set.names.clone(),
        medoids: None,
        video_ids: manifest.videos().iter().map(|v| v.id.clone()).collect(),
    }
    .write_for(labels_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(entries: &[(&str, Vec<f64>)]) -> EmbeddingTable {
        let dim = entries[0].1.len();
        let m = Array2::from_shape_fn((entries.len(), dim), |(i, j)| entries[i].1[j]);
        EmbeddingTable::new(entries.iter().map(|e| e.0.to_string()).collect(), m).unwrap()
    }

    #[test]
    fn exact_duplicate_collapses() {
        let t = table(&[("baseball bat", vec![1.0, 0.0]), ("pitch", vec![0.0, 1.0])]);
        let set = filter_concepts(
            &[vec!["baseball bat".into(), "Baseball Bat ".into()]],
            &["pitch".into()],
            &ConceptFilterParams::default(),
            ConceptKind::Object,
            &t,
        )
        .unwrap();
        assert_eq!(set.names, vec!["baseball bat"]);
    }

    #[test]
    fn class_name_collision_dropped() {
        let t = table(&[
            ("baseball swing", vec![1.0, 0.0]),
            ("glove", vec![0.0, 1.0]),
        ]);
        let set = filter_concepts(
            &[vec!["baseball swing".into(), "glove".into()]],
            &["Baseball Swing".into()],
            &ConceptFilterParams::default(),
            ConceptKind::Object,
            &t,
        )
        .unwrap();
        assert_eq!(set.names, vec!["glove"]);
    }

    #[test]
    fn long_phrases_dropped_and_empty_set_errors() {
        let t = table(&[
            ("a very long descriptive phrase", vec![1.0, 0.0]),
            ("run", vec![0.0, 1.0]),
        ]);
        let r = filter_concepts(
            &[vec!["a very long descriptive phrase".into()]],
            &["run".into()],
            &ConceptFilterParams::default(),
            ConceptKind::Scene,
            &t,
        );
        assert!(matches!(r, Err(Error::EmptyConceptSet(_))));
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let t = table(&[("run", vec![0.0, 1.0])]);
        let r = filter_concepts(
            &[vec!["ball".into()]],
            &["run".into()],
            &ConceptFilterParams::default(),
            ConceptKind::Object,
            &t,
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
        unit(Array1::from_shape_fn(d, |_| rng.random::<f64>() - 0.5))
    }

    #[test]
    fn random_candidates_match_rule_by_rule_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let d = 3;
        let words = ["red", "ball", "net", "court", "big", "shoe"];
        let mut vocab: Vec<(String, Vec<f64>)> = Vec::new();
        let mut per_class = vec![Vec::new(), Vec::new()];
        for i in 0..50 {
            let n = rng.random_range(1..7);
            let phrase: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
            let phrase = format!("{} {i}", phrase.join(" "));
            vocab.push((phrase.clone(), random_unit(&mut rng, d).to_vec()));
            per_class[i % 2].push(phrase);
        }
        let classes = vec!["class a".to_string(), "class b".to_string()];
        for c in &classes {
            vocab.push((c.clone(), random_unit(&mut rng, d).to_vec()));
        }
        let entries: Vec<(&str, Vec<f64>)> = vocab.iter().map(|(p, v)| (p.as_str(), v.clone())).collect();
        let t = table(&entries);
        let params = ConceptFilterParams {
            max_words: 4,
            dup_sim: 0.95,
            class_sim: 0.9,
        };
        let got = filter_concepts(&per_class, &classes, &params, ConceptKind::Object, &t).unwrap();

        // oracle: rules applied one after another on plain vectors
        let vec_of = |p: &str| vocab.iter().find(|(q, _)| q == p).unwrap().1.clone();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut stage: Vec<String> = Vec::new();
        for list in &per_class {
            for p in list {
                if !stage.contains(p) {
                    stage.push(p.clone());
                }
            }
        }
        stage.retain(|p| p.split(' ').count() <= 4);
        stage.retain(|p| classes.iter().all(|c| cos(&vec_of(p), &vec_of(c)) <= 0.9));
        let mut kept: Vec<String> = Vec::new();
        for p in stage {
            if kept.iter().all(|k| cos(&vec_of(&p), &vec_of(k)) <= 0.95) {
                kept.push(p);
            }
        }
        assert_eq!(got.names, kept);
        for i in 0..got.len() {
            for j in 0..i {
                assert!(cosine(got.embedding.row(i), got.embedding.row(j)) <= 0.95);
            }
            assert!((got.embedding.row(i).dot(&got.embedding.row(i)) - 1.0).abs() < 1e-5);
        }
    }

    fn basis_set(m: usize, d: usize) -> ContextConceptSet {
        ContextConceptSet {
            kind: ConceptKind::Object,
            names: (0..m).map(|i| format!("c{i}")).collect(),
            embedding: Array2::from_shape_fn((m, d), |(i, j)| if i == j { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn orthonormal_basis_labels() {
        let set = basis_set(3, 4);
        let v = array![[1.0, 0.0, 0.0, 0.0]];
        assert_eq!(pseudo_labels(&set, &v, false).unwrap(), array![[1.0, 0.0, 0.0]]);
        let neg = array![[-1.0, 0.0, 0.0, 0.0]];
        assert_eq!(pseudo_labels(&set, &neg, true).unwrap()[[0, 0]], 0.0);
        assert_eq!(pseudo_labels(&set, &neg, false).unwrap()[[0, 0]], -1.0);
        assert!(pseudo_labels(&set, &array![[1.0, 0.0]], false).is_err());
    }

    #[test]
    fn pseudo_labels_match_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = Array2::from_shape_fn((20, 8), |_| rng.random::<f64>() - 0.5);
        let e = Array2::from_shape_fn((12, 8), |_| rng.random::<f64>() - 0.5);
        let mut e_unit = e.clone();
        for mut r in e_unit.rows_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        let set = ContextConceptSet {
            kind: ConceptKind::Scene,
            names: (0..12).map(|i| format!("s{i}")).collect(),
            embedding: e_unit.clone(),
        };
        let got = pseudo_labels(&set, &v, false).unwrap();
        for i in 0..20 {
            let norm: f64 = (0..8).map(|k| v[[i, k]] * v[[i, k]]).sum::<f64>().sqrt();
            for j in 0..12 {
                let mut acc = 0.0;
                for k in 0..8 {
                    acc += v[[i, k]] / norm * e_unit[[j, k]];
                }
                assert!((got[[i, j]] - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permuting_concepts_permutes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut set = basis_set(5, 6);
        set.embedding = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>());
        let v = Array2::from_shape_fn((7, 6), |_| rng.random::<f64>() - 0.5);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted = ContextConceptSet {
            kind: set.kind,
            names: perm.iter().map(|&p| set.names[p].clone()).collect(),
            embedding: set.embedding.select(ndarray::Axis(0), &perm),
        };
        let a = pseudo_labels(&set, &v, false).unwrap();
        let b = pseudo_labels(&permuted, &v, false).unwrap();
        assert_eq!(a.select(ndarray::Axis(1), &perm), b);
    }

    #[test]
    fn linear_in_video_embedding_without_clamp() {
        let set = basis_set(2, 3);
        let a = array![[0.6, 0.8, 0.0]];
        let b = array![[0.0, 0.6, 0.8]];
        let la = pseudo_labels(&set, &a, false).unwrap();
        let lb = pseudo_labels(&set, &b, false).unwrap();
        let mix = &a * 0.5 + &b * 0.5;
        let norm = mix.row(0).dot(&mix.row(0)).sqrt();
        let lm = pseudo_labels(&set, &mix, false).unwrap() * norm;
        let expect = (&la + &lb) * 0.5;
        for (x, y) in lm.iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn prompts_render() {
        let p = render_prompt(ConceptKind::Object, "Baseball Pitch").unwrap();
        assert!(p.starts_with("For the Baseball Pitch,"));
        assert!(render_prompt(ConceptKind::Motion, "x").is_none());
    }
}
