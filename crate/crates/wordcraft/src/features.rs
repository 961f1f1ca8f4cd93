//! Structured entity features built from the recipe graph itself.
//!
//! Pretrained word vectors are not always at hand. This builds a small
//! distributional embedding instead: positive pointwise mutual information
//! over recipe co-occurrences (ingredient with ingredient, ingredient with
//! result), factored by a symmetric eigendecomposition. Entities that take
//! part in similar recipes end up close, which is the property the agent
//! exploits from word vectors.

use nalgebra::DMatrix;

use wordcraft_core::embed::{oov_vector, EmbedError, EmbeddingSource, EmbeddingTable};
use wordcraft_core::recipes::RecipeBook;

/// PPMI spectral features of width `dim`. Columns beyond the number of
/// entities are zero. Entities that never occur in a recipe fall back to
/// their deterministic out-of-vocabulary vector.
pub fn cooccurrence_features(book: &RecipeBook, dim: usize) -> Result<EmbeddingTable, EmbedError> {
    if dim == 0 {
        return Err(EmbedError::ZeroDim);
    }
    let n = book.num_entities();
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for r in book.recipes() {
        let (a, b) = r.ingredients;
        let c = r.result;
        for (x, y) in [(a, b), (a, c), (b, c)] {
            counts[(x.index(), y.index())] += 1.0;
            counts[(y.index(), x.index())] += 1.0;
        }
    }
    let total = counts.sum();
    let row_sums: Vec<f64> = (0..n).map(|i| counts.row(i).sum()).collect();
    let mut ppmi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let c = counts[(i, j)];
            if c > 0.0 {
                ppmi[(i, j)] = (c * total / (row_sums[i] * row_sums[j])).ln().max(0.0);
            }
        }
    }
    let eig = ppmi.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // stable order: magnitude descending, index ascending on ties
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let used = dim.min(n);
    let rows = book
        .entities()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if row_sums[i] == 0.0 {
                return oov_vector(&e.name, dim);
            }
            let mut v = vec![0.0; dim];
            for (slot, &k) in order[..used].iter().enumerate() {
                let ev = &eig.eigenvectors;
                // fix the sign of each eigenvector so results do not depend
                // on the solver's arbitrary choice
                let sign = sign_of(ev.column(k).iter().copied());
                v[slot] = sign * ev[(i, k)] * eig.eigenvalues[k].abs().sqrt();
            }
            v
        })
        .collect();
    EmbeddingTable::from_rows(dim, rows, EmbeddingSource::Cooccurrence)
}

fn sign_of(col: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for x in col {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}
