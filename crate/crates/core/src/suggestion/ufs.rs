use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentOutcome;
use crate::corpus::{Review, ReviewSet};

/// A feature's share of the target app's negative reviews, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature_name: String,
    pub negative_count: usize,
    pub ufs: f64,
}

/// Scores from raw negative counts, sorted by ufs desc then name asc.
pub fn ufs_from_counts<S: AsRef<str>>(counts: &[(S, usize)]) -> Vec<FeatureScore> {
    let total: usize = counts.iter().map(|(_, c)| c).sum();
    if total == 0 {
        log::warn!("no negative reviews; every feature scores 0");
    }
    let mut scores: Vec<FeatureScore> = counts
        .iter()
        .map(|(name, c)| FeatureScore {
            feature_name: name.as_ref().to_string(),
            negative_count: *c,
            ufs: if total == 0 {
                0.0
            } else {
                *c as f64 / total as f64 * 100.0
            },
        })
        .collect();
    scores.sort_by(|a, b| {
        b.ufs
            .total_cmp(&a.ufs)
            .then_with(|| a.feature_name.cmp(&b.feature_name))
    });
    scores
}

/// One score per catalog feature for `target_app`. Quarantined reviews have
/// no feature and are left out of the denominator.
pub fn compute_ufs(
    outcome: &AssignmentOutcome,
    reviews: &ReviewSet,
    catalog: &[&str],
    target_app: &str,
) -> Vec<FeatureScore> {
    let mut counts: BTreeMap<&str, usize> = catalog.iter().map(|n| (*n, 0)).collect();
    for a in &outcome.assignments {
        let Some(r) = reviews.get(&a.review_id) else {
            continue;
        };
        if r.app_id == target_app && r.is_negative() {
            if let Some(c) = counts.get_mut(a.feature_name.as_str()) {
                *c += 1;
            }
        }
    }
    let counts: Vec<(&str, usize)> = counts.into_iter().collect();
    ufs_from_counts(&counts)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segregated<'a> {
    /// Target-app reviews of the feature rated 1-2.
    pub negatives: Vec<&'a Review>,
    /// Competitor reviews of the feature rated 4-5.
    pub positives: Vec<&'a Review>,
}

pub fn segregate<'a>(
    reviews: &'a ReviewSet,
    feature: &str,
    outcome: &AssignmentOutcome,
    target_app: &str,
) -> Segregated<'a> {
    let feature_of: HashMap<&str, &str> = outcome.feature_of();
    let mut out = Segregated::default();
    for r in reviews {
        if feature_of.get(r.id.as_str()) != Some(&feature) {
            continue;
        }
        if r.app_id == target_app {
            if r.is_negative() {
                out.negatives.push(r);
            }
        } else if r.is_positive() {
            out.positives.push(r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{Assignment, ResolvedVia};
    use crate::corpus::review;
    use proptest::prelude::*;

    fn ufs_of(scores: &[FeatureScore], name: &str) -> f64 {
        scores.iter().find(|s| s.feature_name == name).unwrap().ufs
    }

    #[test]
    fn weather_counts() {
        // 336 / 652, 159 / 652, 157 / 652
        let s = ufs_from_counts(&[
            ("Accuracy", 336),
            ("Ease of Use", 159),
            ("Performance", 157),
        ]);
        assert!((ufs_of(&s, "Accuracy") - 51.53).abs() < 0.01);
        assert!((ufs_of(&s, "Ease of Use") - 24.39).abs() < 0.01);
        assert!((ufs_of(&s, "Performance") - 24.08).abs() < 0.01);
        assert_eq!(s[0].feature_name, "Accuracy");
    }

    #[test]
    fn degenerate_counts() {
        let s = ufs_from_counts(&[("A", 0), ("B", 7), ("C", 0)]);
        assert_eq!(
            s.iter().map(|x| x.ufs).collect::<Vec<_>>(),
            [100.0, 0.0, 0.0]
        );
        assert_eq!(s[1].feature_name, "A");
        let s = ufs_from_counts(&[("D", 3), ("C", 3), ("B", 3), ("A", 3)]);
        assert!(s.iter().all(|x| x.ufs == 25.0));
        assert_eq!(s[0].feature_name, "A");
        let s = ufs_from_counts(&[("A", 0), ("B", 0)]);
        assert!(s.iter().all(|x| x.ufs == 0.0));
    }

    fn outcome(pairs: &[(&str, &str)]) -> AssignmentOutcome {
        AssignmentOutcome {
            assignments: pairs
                .iter()
                .map(|(id, f)| Assignment {
                    review_id: id.to_string(),
                    feature_name: f.to_string(),
                    resolved_via: ResolvedVia::Exact,
                })
                .collect(),
            quarantined: vec![],
        }
    }

    #[test]
    fn compute_counts_target_negatives_only() {
        let reviews = ReviewSet::new(vec![
            review("t1", "target", 1, "2020-01-01", "a"),
            review("t2", "target", 2, "2020-01-01", "b"),
            review("t3", "target", 5, "2020-01-01", "c"),
            review("c1", "rival", 1, "2020-01-01", "d"),
        ])
        .unwrap();
        let o = outcome(&[
            ("t1", "Radar"),
            ("t2", "Ads"),
            ("t3", "Radar"),
            ("c1", "Radar"),
        ]);
        let s = compute_ufs(&o, &reviews, &["Ads", "Radar", "Widget"], "target");
        assert_eq!(s.len(), 3);
        assert_eq!(ufs_of(&s, "Ads"), 50.0);
        assert_eq!(ufs_of(&s, "Radar"), 50.0);
        assert_eq!(ufs_of(&s, "Widget"), 0.0);
    }

    #[test]
    fn segregate_by_rating_and_app() {
        let reviews = ReviewSet::new(
            (1..=5)
                .flat_map(|r| {
                    [
                        review(&format!("t{r}"), "target", r, "2020-01-01", "x"),
                        review(&format!("c{r}"), "rival", r, "2020-01-01", "x"),
                    ]
                })
                .chain([review("o1", "rival", 5, "2020-01-01", "x")])
                .collect(),
        )
        .unwrap();
        let mut pairs: Vec<(String, &str)> =
            reviews.iter().map(|r| (r.id.clone(), "Radar")).collect();
        pairs.last_mut().unwrap().1 = "Ads";
        let pairs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let s = segregate(&reviews, "Radar", &outcome(&pairs), "target");
        let ids = |v: &[&Review]| v.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&s.negatives), ["t1", "t2"]);
        assert_eq!(ids(&s.positives), ["c4", "c5"]);
    }

    proptest! {
        #[test]
        fn sums_to_hundred(counts in proptest::collection::vec(0usize..10_000, 1..20)) {
            let named: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, c)| (format!("f{i}"), *c)).collect();
            let s = ufs_from_counts(&named);
            let sum: f64 = s.iter().map(|x| x.ufs).sum();
            if counts.iter().sum::<usize>() > 0 {
                prop_assert!((sum - 100.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(sum, 0.0);
            }
        }

        #[test]
        fn order_is_scale_invariant(counts in proptest::collection::vec(0usize..1000, 1..12), m in 1usize..50) {
            let a: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, c)| (format!("f{i:02}"), *c)).collect();
            let b: Vec<(String, usize)> = a.iter().map(|(n, c)| (n.clone(), c * m)).collect();
            let names = |v: Vec<FeatureScore>| v.into_iter().map(|s| s.feature_name).collect::<Vec<_>>();
            prop_assert_eq!(names(ufs_from_counts(&a)), names(ufs_from_counts(&b)));
        }

        #[test]
        fn segregation_is_disjoint_and_skips_neutral(ratings in proptest::collection::vec((1u8..=5, any::<bool>()), 1..40)) {
            let reviews = ReviewSet::new(
                ratings.iter().enumerate()
                    .map(|(i, (r, t))| review(&format!("r{i}"), if *t { "target" } else { "rival" }, *r, "2020-01-01", "x"))
                    .collect(),
            ).unwrap();
            let pairs: Vec<(String, &str)> = reviews.iter().map(|r| (r.id.clone(), "F")).collect();
            let pairs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), *b)).collect();
            let s = segregate(&reviews, "F", &outcome(&pairs), "target");
            for r in &s.negatives {
                prop_assert!(r.rating <= 2 && r.app_id == "target");
            }
            for r in &s.positives {
                prop_assert!(r.rating >= 4 && r.app_id != "target");
                prop_assert!(!s.negatives.iter().any(|n| n.id == r.id));
            }
        }
    }
}
