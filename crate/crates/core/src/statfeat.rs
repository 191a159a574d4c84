//! The 31 lexical statistics computed for a publication against one
//! grant-description view.
//!
//! Slot `i` of a [`StatFeatureVector`] holds feature `i + 1`:
//!
//! | slots | feature |
//! |-------|---------|
//! | 0-3   | Σ c(q,d), Σ ln(c(q,d)+1), Σ c(q,d)/\|d\|, \|d\| |
//! | 4-8   | sum/min/max/mean/var of the publication term counts |
//! | 9-13  | the same five statistics divided by \|d\| |
//! | 14-16 | Σ ln(\|D\|/(cf+1)+1), Σ idf, Σ ln(idf+1) |
//! | 17-21 | statistics of c(q,d)·idf(q) |
//! | 22-26 | statistics of c(q,d)/\|d\|·idf(q) |
//! | 27    | BM25 |
//! | 28-30 | LMIR absolute discount, Dirichlet, Jelinek-Mercer |
//!
//! Sums run over the distinct publication terms. Variances are population
//! variances, statistics of an empty set are 0 and any division by a zero
//! grant length yields 0.

use serde::{Deserialize, Serialize};

use crate::textproc::{TermBag, Vocabulary};

pub const STAT_FEATURE_COUNT: usize = 31;

/// Floor applied to the collection probability of terms the grant corpus
/// never contains.
const MIN_COLLECTION_PROB: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatFeatureVector(pub [f64; STAT_FEATURE_COUNT]);

impl StatFeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Feature by its 1-based table number.
    pub fn feature(&self, number: usize) -> f64 {
        self.0[number - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SmoothingMethod {
    JelinekMercer { lambda: f64 },
    Dirichlet { mu: f64 },
    AbsoluteDiscount { delta: f64 },
}

impl SmoothingMethod {
    pub const JELINEK_MERCER: SmoothingMethod = SmoothingMethod::JelinekMercer { lambda: 0.1 };
    pub const DIRICHLET: SmoothingMethod = SmoothingMethod::Dirichlet { mu: 2000.0 };
    pub const ABSOLUTE_DISCOUNT: SmoothingMethod = SmoothingMethod::AbsoluteDiscount { delta: 0.7 };
}

/// Tunables for the scored features. Defaults are k1 = 1.5, b = 0.75,
/// λ = 0.1, μ = 2000, δ = 0.7.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatParams {
    pub k1: f64,
    pub b: f64,
    pub jm_lambda: f64,
    pub dirichlet_mu: f64,
    pub abs_delta: f64,
}

impl Default for StatParams {
    fn default() -> Self {
        StatParams {
            k1: 1.5,
            b: 0.75,
            jm_lambda: 0.1,
            dirichlet_mu: 2000.0,
            abs_delta: 0.7,
        }
    }
}

pub fn idf(term: &str, vocab: &Vocabulary) -> f64 {
    vocab.idf(term)
}

pub fn extract_stat_features(
    pub_bag: &TermBag,
    grant: &TermBag,
    vocab: &Vocabulary,
) -> StatFeatureVector {
    extract_stat_features_with(pub_bag, grant, vocab, &StatParams::default())
}

pub fn extract_stat_features_with(
    pub_bag: &TermBag,
    grant: &TermBag,
    vocab: &Vocabulary,
    params: &StatParams,
) -> StatFeatureVector {
    let grant_len = f64::from(grant.len());
    let per_grant_len = |x: f64| if grant_len > 0.0 { x / grant_len } else { 0.0 };
    let doc_count = vocab.doc_count() as f64;

    let mut covered_sum = 0.0;
    let mut covered_log_sum = 0.0;
    let mut cf_idf_sum = 0.0;
    let mut idf_sum = 0.0;
    let mut idf_log_sum = 0.0;
    let mut pub_counts = Vec::with_capacity(pub_bag.unique_count());
    let mut c_idf = Vec::with_capacity(pub_bag.unique_count());
    let mut weighted_c_idf = Vec::with_capacity(pub_bag.unique_count());

    for (term, pub_count) in pub_bag.iter() {
        let in_grant = f64::from(grant.count(term));
        let term_idf = vocab.idf(term);
        covered_sum += in_grant;
        covered_log_sum += (in_grant + 1.0).ln();
        cf_idf_sum += (doc_count / (vocab.cf(term) as f64 + 1.0) + 1.0).ln();
        idf_sum += term_idf;
        idf_log_sum += (term_idf + 1.0).ln();
        pub_counts.push(f64::from(pub_count));
        c_idf.push(in_grant * term_idf);
        weighted_c_idf.push(per_grant_len(in_grant) * term_idf);
    }

    let tf = Summary::of(&pub_counts);
    let c_idf = Summary::of(&c_idf);
    let weighted = Summary::of(&weighted_c_idf);

    let mut out = [0.0; STAT_FEATURE_COUNT];
    out[0] = covered_sum;
    out[1] = covered_log_sum;
    out[2] = per_grant_len(covered_sum);
    out[3] = grant_len;
    out[4..9].copy_from_slice(&tf.as_array());
    for (slot, value) in out[9..14].iter_mut().zip(tf.as_array()) {
        *slot = per_grant_len(value);
    }
    out[14] = cf_idf_sum;
    out[15] = idf_sum;
    out[16] = idf_log_sum;
    out[17..22].copy_from_slice(&c_idf.as_array());
    out[22..27].copy_from_slice(&weighted.as_array());
    out[27] = bm25_score(pub_bag, grant, vocab, params.k1, params.b);
    out[28] = lmir_score(
        pub_bag,
        grant,
        vocab,
        SmoothingMethod::AbsoluteDiscount {
            delta: params.abs_delta,
        },
    );
    out[29] = lmir_score(
        pub_bag,
        grant,
        vocab,
        SmoothingMethod::Dirichlet {
            mu: params.dirichlet_mu,
        },
    );
    out[30] = lmir_score(
        pub_bag,
        grant,
        vocab,
        SmoothingMethod::JelinekMercer {
            lambda: params.jm_lambda,
        },
    );
    StatFeatureVector(out)
}

/// BM25 over the distinct publication terms, using the smoothed idf.
pub fn bm25_score(pub_bag: &TermBag, grant: &TermBag, vocab: &Vocabulary, k1: f64, b: f64) -> f64 {
    let avg_len = vocab.avg_doc_len();
    let len_ratio = if avg_len > 0.0 {
        f64::from(grant.len()) / avg_len
    } else {
        0.0
    };
    let norm = k1 * (1.0 - b + b * len_ratio);
    pub_bag
        .iter()
        .filter_map(|(term, _)| {
            let c = f64::from(grant.count(term));
            (c > 0.0).then(|| vocab.idf(term) * c * (k1 + 1.0) / (c + norm))
        })
        .sum()
}

/// Query log-likelihood of the publication under the smoothed grant
/// language model, weighted by publication term counts. An empty grant
/// scores 0.
pub fn lmir_score(
    pub_bag: &TermBag,
    grant: &TermBag,
    vocab: &Vocabulary,
    method: SmoothingMethod,
) -> f64 {
    if grant.is_empty() {
        return 0.0;
    }
    let grant_len = f64::from(grant.len());
    let unique = grant.unique_count() as f64;
    let total = vocab.total_tokens() as f64;
    pub_bag
        .iter()
        .map(|(term, pub_count)| {
            let collection = if total > 0.0 {
                vocab.cf(term) as f64 / total
            } else {
                0.0
            }
            .max(MIN_COLLECTION_PROB);
            let c = f64::from(grant.count(term));
            let p = match method {
                SmoothingMethod::JelinekMercer { lambda } => {
                    (1.0 - lambda) * c / grant_len + lambda * collection
                }
                SmoothingMethod::Dirichlet { mu } => (c + mu * collection) / (grant_len + mu),
                SmoothingMethod::AbsoluteDiscount { delta } => {
                    ((c - delta).max(0.0) + delta * unique * collection) / grant_len
                }
            };
            f64::from(pub_count) * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Summary {
    sum: f64,
    min: f64,
    max: f64,
    mean: f64,
    var: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let sum: f64 = values.iter().sum();
        let mean = sum / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary {
            sum,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            var,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [self.sum, self.min, self.max, self.mean, self.var]
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn bag(text: &str) -> TermBag {
        TermBag::from_tokens(tokenize(text))
    }

    #[test]
    fn idf_examples() {
        let mut docs = vec![TermBag::from_counts([("t", 1)]); 9];
        docs.extend(vec![TermBag::from_counts([("u", 1)]); 91]);
        let v = Vocabulary::build(&docs).unwrap();
        assert!(close(idf("t", &v), 2.302585, 1e-6));

        let v = Vocabulary::build(&[bag("aa bb"), bag("cc")]).unwrap();
        assert_eq!(idf("aa", &v), 0.0);

        let v = Vocabulary::build(&vec![bag("aa"); 50]).unwrap();
        assert!(close(idf("never", &v), 3.912023, 1e-6));
    }

    #[test]
    fn hand_evaluated_pair_features() {
        let pub_bag = TermBag::from_counts([("gene", 2), ("als", 1)]);
        let grant = TermBag::from_counts([("gene", 1), ("mouse", 1)]);
        let vocab = Vocabulary::build(std::slice::from_ref(&grant)).unwrap();
        let f = extract_stat_features(&pub_bag, &grant, &vocab);
        assert_eq!(f.feature(1), 1.0);
        assert_eq!(f.feature(3), 0.5);
        assert_eq!(f.feature(4), 2.0);
    }

    #[test]
    fn empty_publication_only_keeps_grant_length() {
        let grant = bag("gene therapy gene");
        let vocab = Vocabulary::build(std::slice::from_ref(&grant)).unwrap();
        let f = extract_stat_features(&TermBag::default(), &grant, &vocab);
        for (i, v) in f.values().iter().enumerate() {
            let expected = if i == 3 { 3.0 } else { 0.0 };
            assert_eq!(*v, expected, "slot {i}");
        }
    }

    #[test]
    fn single_term_tf_statistics() {
        let pub_bag = TermBag::from_counts([("cell", 4)]);
        let grant = bag("cell line");
        let vocab = Vocabulary::build(std::slice::from_ref(&grant)).unwrap();
        let f = extract_stat_features(&pub_bag, &grant, &vocab);
        assert_eq!(&f.values()[4..9], &[4.0, 4.0, 4.0, 4.0, 0.0]);
        assert_eq!(&f.values()[9..14], &[2.0, 2.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn empty_grant_has_no_nan() {
        let pub_bag = bag("gene therapy");
        let grant = TermBag::default();
        let vocab = Vocabulary::build(&[grant.clone(), TermBag::default()]).unwrap();
        let f = extract_stat_features(&pub_bag, &grant, &vocab);
        assert!(f.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bm25_hand_fixture() {
        let grants = [
            bag("gene therapy gene"),
            bag("cancer therapy"),
            bag("mouse model"),
        ];
        let vocab = Vocabulary::build(&grants).unwrap();
        let query = TermBag::from_counts([("gene", 1)]);
        let score = bm25_score(&query, &grants[0], &vocab, 1.5, 0.75);
        assert!(close(score, 0.530515, 1e-6), "{score}");

        assert_eq!(bm25_score(&query, &grants[1], &vocab, 1.5, 0.75), 0.0);

        let no_norm = bm25_score(&query, &grants[0], &vocab, 1.5, 0.0);
        let expected = (1.5f64).ln() * 2.0 * 2.5 / (2.0 + 1.5);
        assert!(close(no_norm, expected, 1e-12));
    }

    #[test]
    fn lmir_hand_fixtures() {
        let docs = [bag("aa bb aa"), bag("bb cc")];
        let vocab = Vocabulary::build(&docs).unwrap();
        let query = TermBag::from_counts([("aa", 1)]);
        let jm = lmir_score(&query, &docs[0], &vocab, SmoothingMethod::JELINEK_MERCER);
        let dir = lmir_score(&query, &docs[0], &vocab, SmoothingMethod::DIRICHLET);
        let abs = lmir_score(&query, &docs[0], &vocab, SmoothingMethod::ABSOLUTE_DISCOUNT);
        assert!(close(jm, -0.446287, 1e-6), "{jm}");
        assert!(close(dir, -0.915293, 1e-6), "{dir}");
        assert!(close(abs, -0.478036, 1e-6), "{abs}");
        assert_eq!(
            lmir_score(
                &query,
                &TermBag::default(),
                &vocab,
                SmoothingMethod::DIRICHLET
            ),
            0.0
        );
    }

    #[test]
    fn bm25_is_monotone_in_grant_count() {
        // |d| stays 12 and the vocabulary is fixed while c(gene, d) grows.
        let vocab =
            Vocabulary::build(&[bag("gene filler"), bag("xx yy zz"), bag("yy ww")]).unwrap();
        let query = TermBag::from_counts([("gene", 1), ("yy", 2)]);
        let mut last = f64::NEG_INFINITY;
        for c in 0..=12u32 {
            let grant = TermBag::from_counts([("gene", c), ("filler", 12 - c)]);
            let s = bm25_score(&query, &grant, &vocab, 1.5, 0.75);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn lmir_probabilities_are_valid() {
        let docs = [bag("aa bb aa cc"), bag("bb cc dd"), bag("ee")];
        let vocab = Vocabulary::build(&docs).unwrap();
        for grant in &docs {
            for term in ["aa", "bb", "cc", "dd", "ee", "unseen"] {
                let q = TermBag::from_counts([(term, 1)]);
                for method in [
                    SmoothingMethod::JELINEK_MERCER,
                    SmoothingMethod::DIRICHLET,
                    SmoothingMethod::ABSOLUTE_DISCOUNT,
                ] {
                    let p = lmir_score(&q, grant, &vocab, method).exp();
                    assert!(p > 0.0 && p <= 1.0, "{term} {method:?} {p}");
                }
            }
        }
    }
}
