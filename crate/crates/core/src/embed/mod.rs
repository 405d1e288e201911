//! Unit-norm dense embeddings per window: the built-in tf-idf → LSI
//! pipeline and import of externally computed vectors.

mod lsi;
mod set;
mod tfidf;

use rayon::prelude::*;

use crate::corpus::DocumentWindow;
use crate::Result;

pub use lsi::{lsi_fit, LsiConfig, LsiProjection, DEFAULT_FIT_ROWS, DEFAULT_LSI_DIM, LSI_MAGIC};
pub use set::{
    import_embeddings, read_embeddings, write_embeddings, EmbeddingSet, EMBEDDING_MAGIC,
    NORM_TOLERANCE,
};
pub use tfidf::{SparseVec, TfIdfModel, TfIdfVector, TFIDF_MAGIC};

/// A fitted tf-idf model and LSI projection.
#[derive(Debug, Clone)]
pub struct LsiEmbedder {
    pub tfidf: TfIdfModel,
    pub projection: LsiProjection,
}

#[derive(Debug)]
pub struct Embedded {
    pub set: EmbeddingSet,
    /// Windows whose tf-idf or projection vanished.
    pub degenerate: Vec<u64>,
}

impl LsiEmbedder {
    pub fn fit(windows: &[DocumentWindow], vocab_size: u32, config: &LsiConfig) -> Result<Self> {
        let tfidf = TfIdfModel::fit(windows.iter().map(|w| w.tokens.as_slice()), vocab_size)?;
        let rows: Vec<SparseVec> = windows
            .par_iter()
            .map(|w| tfidf.transform(&w.tokens).vector)
            .collect();
        let projection = lsi_fit(&rows, config)?;
        Ok(Self { tfidf, projection })
    }

    pub fn embed(&self, windows: &[DocumentWindow]) -> Result<Embedded> {
        let vectors: Vec<(Vec<f32>, bool)> = windows
            .par_iter()
            .map(|w| {
                let tf = self.tfidf.transform(&w.tokens);
                let (v, zero_projection) = self.projection.transform(&tf.vector)?;
                Ok((v, tf.degenerate || zero_projection))
            })
            .collect::<Result<_>>()?;
        let mut set = EmbeddingSet::new(self.projection.dim());
        let mut degenerate = Vec::new();
        for (w, (v, flagged)) in windows.iter().zip(vectors) {
            if flagged {
                degenerate.push(w.window_id);
            }
            set.push(w.window_id, &v)?;
        }
        set.mark_normalized();
        if !degenerate.is_empty() {
            log::warn!(
                "{} of {} windows had degenerate embeddings",
                degenerate.len(),
                windows.len()
            );
        }
        Ok(Embedded { set, degenerate })
    }
}
