//! Binary model file.
//!
//! Layout, all integers and reals little-endian, lengths as u64:
//!
//! ```text
//! magic "ACSEGv01"
//! palette text            (str)
//! feature recipe          (str)
//! recipe fingerprint      (u64, FNV-1a of the recipe)
//! CRF lambda              (f64, NaN if untuned)
//! classes, folds          (u64, u64)
//! context kind            (u8: 0 image, 1 cloud)
//! data fingerprint, dim   (u64, u64)
//! assignment              (len, then id u64 + fold u32 each)
//! held-out accuracies     (f64s)
//! stages                  (len, then per stage:)
//!   fold ensembles        (len, ensembles)
//!   full ensemble
//!   fold train ids        (len, then len + u64s each)
//!   fold fingerprints     (len, u64s)
//! ensemble: classes, dim, rounds (u64), shrinkage (f64), trees (len, then
//!   per tree: nodes (len; tag u8 then split feature u32, threshold f64,
//!   left u32, right u32 | leaf u32), leaf scores (f64s))
//! ```

use std::path::Path;

use super::codec::{fnv1a64, ByteReader, ByteWriter};
use super::palette::ClassPalette;
use crate::error::{Error, Result};
use crate::gbdt::{DecisionTree, Node, TreeEnsemble};
use crate::stacking::{ContextKind, Stage, StackModel};

pub const MAGIC: &[u8; 8] = b"ACSEGv01";
const WHAT: &str = "model file";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub palette: ClassPalette,
    /// Human-readable feature extractor configuration.
    pub recipe: String,
    /// Potts weight tuned at training time; NaN when not tuned.
    pub crf_lambda: f64,
    pub stack: StackModel,
}

impl ModelFile {
    pub fn new(palette: ClassPalette, recipe: String, stack: StackModel) -> Result<Self> {
        if palette.classes() != stack.classes {
            return Err(Error::DimensionMismatch { expected: palette.classes(), actual: stack.classes });
        }
        Ok(ModelFile { palette, recipe, crf_lambda: f64::NAN, stack })
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.recipe.as_bytes())
    }

    /// Fails unless `recipe` is the one the model was trained with.
    pub fn check_recipe(&self, recipe: &str) -> Result<()> {
        let extractor = fnv1a64(recipe.as_bytes());
        if extractor != self.fingerprint() {
            return Err(Error::FingerprintMismatch { model: self.fingerprint(), extractor });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.str(&self.palette.to_text());
        w.str(&self.recipe);
        w.u64(self.fingerprint());
        w.f64(self.crf_lambda);
        let s = &self.stack;
        w.u64(s.classes as u64);
        w.u64(s.folds as u64);
        w.u8(match s.context {
            ContextKind::Image => 0,
            ContextKind::Cloud => 1,
        });
        w.u64(s.data_fingerprint);
        w.u64(s.data_dim as u64);
        w.len_prefix(s.assignment.len());
        for &(id, f) in &s.assignment {
            w.u64(id);
            w.u32(f);
        }
        w.f64s(&s.held_out_accuracy);
        w.len_prefix(s.stages.len());
        for st in &s.stages {
            w.len_prefix(st.fold_models.len());
            st.fold_models.iter().for_each(|e| write_ensemble(&mut w, e));
            write_ensemble(&mut w, &st.full);
            w.len_prefix(st.fold_train_ids.len());
            for ids in &st.fold_train_ids {
                w.len_prefix(ids.len());
                ids.iter().for_each(|&i| w.u64(i));
            }
            w.len_prefix(st.fold_fingerprints.len());
            st.fold_fingerprints.iter().for_each(|&f| w.u64(f));
        }
        w.into_inner()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data, WHAT);
        let magic = r.bytes(8).map_err(|_| Error::format(WHAT, "missing magic tag"))?;
        if magic != MAGIC {
            return Err(Error::format(WHAT, format!("unsupported magic {:?}", String::from_utf8_lossy(magic))));
        }
        let palette = ClassPalette::parse(&r.str()?)?;
        let recipe = r.str()?;
        let fp = r.u64()?;
        if fp != fnv1a64(recipe.as_bytes()) {
            return Err(Error::format(WHAT, "recipe fingerprint does not match recipe"));
        }
        let crf_lambda = r.f64()?;
        let classes = r.u64()? as usize;
        let folds = r.u64()? as usize;
        let context = match r.u8()? {
            0 => ContextKind::Image,
            1 => ContextKind::Cloud,
            k => return Err(Error::format(WHAT, format!("unknown context kind {k}"))),
        };
        let data_fingerprint = r.u64()?;
        let data_dim = r.u64()? as usize;
        let n = r.len_prefix(12)?;
        let assignment = (0..n).map(|_| Ok((r.u64()?, r.u32()?))).collect::<Result<Vec<_>>>()?;
        let held_out_accuracy = r.f64s()?;
        let n_stages = r.len_prefix(1)?;
        let mut stages = Vec::with_capacity(n_stages);
        for _ in 0..n_stages {
            let nf = r.len_prefix(1)?;
            let fold_models = (0..nf).map(|_| read_ensemble(&mut r)).collect::<Result<Vec<_>>>()?;
            let full = read_ensemble(&mut r)?;
            let ni = r.len_prefix(8)?;
            let mut fold_train_ids = Vec::with_capacity(ni);
            for _ in 0..ni {
                let k = r.len_prefix(8)?;
                fold_train_ids.push((0..k).map(|_| r.u64()).collect::<Result<Vec<_>>>()?);
            }
            let nfp = r.len_prefix(8)?;
            let fold_fingerprints = (0..nfp).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            stages.push(Stage { fold_models, full, fold_train_ids, fold_fingerprints });
        }
        r.finish()?;
        let stack = StackModel {
            classes,
            folds,
            context,
            data_fingerprint,
            data_dim,
            assignment,
            held_out_accuracy,
            stages,
        };
        let mut m = ModelFile::new(palette, recipe, stack)?;
        m.crf_lambda = crf_lambda;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn write_ensemble(w: &mut ByteWriter, e: &TreeEnsemble) {
    w.u64(e.classes() as u64);
    w.u64(e.dim() as u64);
    w.u64(e.rounds() as u64);
    w.f64(e.shrinkage());
    w.len_prefix(e.trees().len());
    for t in e.trees() {
        w.len_prefix(t.nodes().len());
        for n in t.nodes() {
            match *n {
                Node::Split { feature, threshold, left, right } => {
                    w.u8(0);
                    w.u32(feature);
                    w.f64(threshold);
                    w.u32(left);
                    w.u32(right);
                }
                Node::Leaf(k) => {
                    w.u8(1);
                    w.u32(k);
                }
            }
        }
        w.f64s(t.leaf_scores());
    }
}

fn read_ensemble(r: &mut ByteReader) -> Result<TreeEnsemble> {
    let classes = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let rounds = r.u64()? as usize;
    let shrinkage = r.f64()?;
    let nt = r.len_prefix(1)?;
    let mut trees = Vec::with_capacity(nt);
    for _ in 0..nt {
        let nn = r.len_prefix(5)?;
        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            nodes.push(match r.u8()? {
                0 => Node::Split { feature: r.u32()?, threshold: r.f64()?, left: r.u32()?, right: r.u32()? },
                1 => Node::Leaf(r.u32()?),
                k => return Err(Error::format(WHAT, format!("unknown node tag {k}"))),
            });
        }
        trees.push(DecisionTree::from_parts(nodes, r.f64s()?, classes)?);
    }
    TreeEnsemble::new(classes, dim, shrinkage, rounds, trees)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> ModelFile {
        let tree = DecisionTree::stump(1, 0.25, vec![0.1, -0.2, 0.3, 0.0, 0.5, 1e-300, -7.0], vec![0.0; 7]).unwrap();
        let full = TreeEnsemble::new(7, 3, 0.1, 1, vec![tree.clone(), DecisionTree::leaf(vec![f64::MIN_POSITIVE; 7])]).unwrap();
        let stack = StackModel {
            classes: 7,
            folds: 2,
            context: ContextKind::Image,
            data_fingerprint: 0xdead_beef,
            data_dim: 3,
            assignment: vec![(1, 0), (2, 1)],
            held_out_accuracy: vec![0.8125],
            stages: vec![Stage {
                fold_models: vec![full.clone(), TreeEnsemble::empty(7, 3, 0.1)],
                full,
                fold_train_ids: vec![vec![2], vec![1]],
                fold_fingerprints: vec![11, 12],
            }],
        };
        ModelFile::new(ClassPalette::facade(), "f2d scales=1,2,4".into(), stack).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = tiny_model();
        m.crf_lambda = 0.7;
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(ModelFile::from_bytes(&bytes).unwrap(), m);
        let untuned = ModelFile::from_bytes(&tiny_model().to_bytes()).unwrap();
        assert!(untuned.crf_lambda.is_nan());
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let mut bytes = tiny_model().to_bytes();
        let full = bytes.clone();
        bytes[7] = b'2';
        assert!(matches!(ModelFile::from_bytes(&bytes), Err(Error::Format { .. })));
        assert!(ModelFile::from_bytes(&full[..full.len() - 3]).is_err());
    }

    #[test]
    fn recipe_check() {
        let m = tiny_model();
        m.check_recipe("f2d scales=1,2,4").unwrap();
        assert!(matches!(m.check_recipe("f2d scales=1,2"), Err(Error::FingerprintMismatch { .. })));
    }
}
