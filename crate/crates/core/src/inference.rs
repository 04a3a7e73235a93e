//! Contingency tables between partitions and group-comparison tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};
use statrs::function::factorial::ln_binomial;

use crate::data_model::{Covariates, Partition};
use crate::error::{Error, Result};

/// Counts of subjects shared by the groups of two partitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub col_totals: Vec<u64>,
    pub total: u64,
    /// Members of each row group missing from the column partition.
    pub row_absent: Vec<u64>,
    /// Members of each column group missing from the row partition.
    pub col_absent: Vec<u64>,
}

impl ContingencyTable {
    /// Table with generated labels and no absent subjects.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter("counts must form a non-empty rectangle".into()));
        }
        let rows = counts.len();
        Ok(Self::assemble(
            (1..=rows).map(|i| format!("R{i}")).collect(),
            (1..=cols).map(|j| format!("C{j}")).collect(),
            counts,
            vec![0; rows],
            vec![0; cols],
        ))
    }

    fn assemble(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        counts: Vec<Vec<u64>>,
        row_absent: Vec<u64>,
        col_absent: Vec<u64>,
    ) -> Self {
        let row_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_totals: Vec<u64> = (0..col_labels.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        ContingencyTable {
            total: row_totals.iter().sum(),
            row_labels,
            col_labels,
            counts,
            row_totals,
            col_totals,
            row_absent,
            col_absent,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_labels.len(), self.col_labels.len())
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.shape();
        ContingencyTable {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            counts: (0..c).map(|j| (0..r).map(|i| self.counts[i][j]).collect()).collect(),
            row_totals: self.col_totals.clone(),
            col_totals: self.row_totals.clone(),
            total: self.total,
            row_absent: self.col_absent.clone(),
            col_absent: self.row_absent.clone(),
        }
    }
}

/// Cross-tabulates the subjects common to `a` (rows) and `b` (columns).
pub fn cross_tab(a: &Partition, b: &Partition) -> Result<ContingencyTable> {
    let (r, c) = (a.n_groups(), b.n_groups());
    let mut counts = vec![vec![0u64; c]; r];
    let mut row_absent = vec![0u64; r];
    let mut col_absent = vec![0u64; c];
    for (i, g) in a.groups().iter().enumerate() {
        for id in &g.subject_ids {
            match b.group_of(id) {
                Some(j) => counts[i][j] += 1,
                None => row_absent[i] += 1,
            }
        }
    }
    for (j, g) in b.groups().iter().enumerate() {
        col_absent[j] = g.subject_ids.iter().filter(|id| !a.contains(id)).count() as u64;
    }
    let table = ContingencyTable::assemble(
        a.labels().map(str::to_string).collect(),
        b.labels().map(str::to_string).collect(),
        counts,
        row_absent,
        col_absent,
    );
    if table.total == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    pub df: Option<f64>,
    /// Denominator degrees of freedom of an F test.
    pub df2: Option<f64>,
    pub p_value: f64,
}

fn result(test: &str, statistic: f64, df: Option<f64>, df2: Option<f64>, p: f64) -> TestResult {
    TestResult {
        test: test.to_string(),
        statistic,
        df,
        df2,
        p_value: p.clamp(0.0, 1.0),
    }
}

/// Pearson chi-square test of independence. With `yates`, each
/// `|O - E|` is reduced by `min(0.5, |O - E|)` (2x2 tables only).
pub fn chi_square_test(t: &ContingencyTable, yates: bool) -> Result<TestResult> {
    let (r, c) = t.shape();
    if r < 2 || c < 2 {
        return Err(Error::InvalidParameter(format!("chi-square needs at least a 2x2 table, got {r}x{c}")));
    }
    if yates && (r, c) != (2, 2) {
        return Err(Error::NotTwoByTwo { rows: r, cols: c });
    }
    let n = t.total as f64;
    let mut stat = 0.0;
    for i in 0..r {
        for j in 0..c {
            let e = t.row_totals[i] as f64 * t.col_totals[j] as f64 / n;
            if !(e > 0.0) {
                return Err(Error::ZeroExpectedCount);
            }
            let mut dev = (t.counts[i][j] as f64 - e).abs();
            if yates {
                dev -= dev.min(0.5);
            }
            stat += dev * dev / e;
        }
    }
    let df = ((r - 1) * (c - 1)) as f64;
    let dist = ChiSquared::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let name = if yates { "chi-square (Yates)" } else { "chi-square" };
    Ok(result(name, stat, Some(df), None, dist.sf(stat)))
}

/// Two-sided Fisher exact test. The statistic is the sample odds ratio
/// `ad / bc`.
pub fn fisher_exact_2x2(t: &ContingencyTable) -> Result<TestResult> {
    let (r, c) = t.shape();
    if (r, c) != (2, 2) {
        return Err(Error::NotTwoByTwo { rows: r, cols: c });
    }
    let [a, b] = [t.counts[0][0], t.counts[0][1]];
    let [cc, d] = [t.counts[1][0], t.counts[1][1]];
    let (row1, col1, n) = (a + b, a + cc, t.total);
    let log_p = |x: u64| ln_binomial(col1, x) + ln_binomial(n - col1, row1 - x) - ln_binomial(n, row1);
    let lo = (row1 + col1).saturating_sub(n);
    let hi = row1.min(col1);
    let observed = log_p(a);
    let cutoff = observed + (1.0 + 1e-7f64).ln();
    let p: f64 = (lo..=hi).map(log_p).filter(|&lp| lp <= cutoff).map(f64::exp).sum();
    let odds = (a as f64 * d as f64) / (b as f64 * cc as f64);
    Ok(result("fisher-exact", odds, None, None, p))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn students_t_two_sided(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(2.0 * dist.sf(t.abs()))
}

/// Two-sample t test: pooled-variance Student by default, Welch with
/// Satterthwaite degrees of freedom when `welch` is set.
pub fn two_sample_t_test(x: &[f64], y: &[f64], welch: bool) -> Result<TestResult> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "t test needs at least 2 values per sample, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let ((m1, v1), (m2, v2)) = (mean_var(x), mean_var(y));
    let (se, df) = if welch {
        let (a, b) = (v1 / n1, v2 / n2);
        let df = (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
        ((a + b).sqrt(), df)
    } else {
        let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
        ((pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), n1 + n2 - 2.0)
    };
    if !(se > 0.0) {
        return Err(Error::ZeroVariance("two-sample t test".into()));
    }
    let t = (m1 - m2) / se;
    let name = if welch { "welch-t" } else { "student-t" };
    Ok(result(name, t, Some(df), None, students_t_two_sided(t, df)?))
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<TestResult> {
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    if k < 2 || groups.iter().any(Vec::is_empty) || n <= k {
        return Err(Error::InvalidParameter(format!(
            "ANOVA needs at least 2 non-empty groups and more values than groups (k = {k}, n = {n})"
        )));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    if !(ssw > 0.0) {
        return Err(Error::ZeroVariance("one-way ANOVA".into()));
    }
    let (df1, df2) = ((k - 1) as f64, (n - k) as f64);
    let f = (ssb / df1) / (ssw / df2);
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(result("anova-f", f, Some(df1), Some(df2), dist.sf(f)))
}

fn pairs(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Chance-corrected agreement over the subjects common to `a` and `b`.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    let t = match cross_tab(a, b) {
        Err(Error::EmptyIntersection) => return Err(Error::DegeneratePartition("no common subjects".into())),
        other => other?,
    };
    ari_from_table(&t)
}

pub fn ari_from_table(t: &ContingencyTable) -> Result<f64> {
    if t.total < 2 {
        return Err(Error::DegeneratePartition(format!("{} common subject(s)", t.total)));
    }
    let index: f64 = t.counts.iter().flatten().map(|&x| pairs(x)).sum();
    let sum_a: f64 = t.row_totals.iter().map(|&x| pairs(x)).sum();
    let sum_b: f64 = t.col_totals.iter().map(|&x| pairs(x)).sum();
    let expected = sum_a * sum_b / pairs(t.total);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both partitions are all-in-one or all-singletons.
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// One line of a group description table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescribeRow {
    pub variable: String,
    /// Category level, for categorical covariates.
    pub level: Option<String>,
    /// Per group: `mean ± sd` or `count (pct%)`.
    pub cells: Vec<String>,
    pub missing: Vec<usize>,
    pub test: Option<TestResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDescription {
    pub groups: Vec<String>,
    pub sizes: Vec<usize>,
    pub rows: Vec<DescribeRow>,
}

/// Summarises every covariate per group. Columns whose observed values all
/// parse as numbers are continuous (t test for two groups, ANOVA
/// otherwise); the rest are categorical (chi-square, Fisher for 2x2 tables
/// with a zero expected count). Tests that cannot run are left empty.
pub fn describe(partition: &Partition, covariates: &Covariates) -> GroupDescription {
    let groups: Vec<String> = partition.labels().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (col, name) in covariates.names.iter().enumerate() {
        let values: Vec<Vec<Option<&str>>> = partition
            .groups()
            .iter()
            .map(|g| g.subject_ids.iter().map(|id| covariates.get(id, col)).collect())
            .collect();
        let missing: Vec<usize> = values.iter().map(|v| v.iter().filter(|x| x.is_none()).count()).collect();
        let numeric: Option<Vec<Vec<f64>>> = values
            .iter()
            .map(|v| v.iter().flatten().map(|s| s.trim().parse::<f64>().ok()).collect())
            .collect();
        match numeric {
            Some(samples) if samples.iter().any(|s| !s.is_empty()) => {
                let cells = samples
                    .iter()
                    .map(|s| match s.len() {
                        0 => "-".to_string(),
                        1 => format!("{:.2}", s[0]),
                        _ => {
                            let (m, v) = mean_var(s);
                            format!("{m:.2} ± {:.2}", v.sqrt())
                        }
                    })
                    .collect();
                let present: Vec<Vec<f64>> = samples.into_iter().filter(|s| !s.is_empty()).collect();
                let test = if present.len() == 2 {
                    two_sample_t_test(&present[0], &present[1], false).ok()
                } else {
                    one_way_anova(&present).ok()
                };
                rows.push(DescribeRow {
                    variable: name.clone(),
                    level: None,
                    cells,
                    missing,
                    test,
                });
            }
            _ => rows.extend(describe_categorical(name, &values, missing)),
        }
    }
    GroupDescription {
        sizes: partition.sizes(),
        groups,
        rows,
    }
}

fn describe_categorical(name: &str, values: &[Vec<Option<&str>>], missing: Vec<usize>) -> Vec<DescribeRow> {
    let mut tally: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for (g, v) in values.iter().enumerate() {
        for s in v.iter().flatten() {
            tally.entry(s).or_insert_with(|| vec![0; values.len()])[g] += 1;
        }
    }
    let observed: Vec<u64> = (0..values.len()).map(|g| tally.values().map(|c| c[g]).sum()).collect();
    let counts: Vec<Vec<u64>> = tally.values().cloned().collect();
    let test = ContingencyTable::from_counts(counts).ok().and_then(|t| {
        let t = prune_empty_columns(t)?;
        match chi_square_test(&t, false) {
            Ok(r) => Some(r),
            Err(Error::ZeroExpectedCount) if t.shape() == (2, 2) => fisher_exact_2x2(&t).ok(),
            Err(_) => None,
        }
    });
    tally
        .into_iter()
        .enumerate()
        .map(|(i, (level, c))| DescribeRow {
            variable: name.to_string(),
            level: Some(level.to_string()),
            cells: c
                .iter()
                .zip(&observed)
                .map(|(&k, &tot)| {
                    let pct = if tot == 0 { 0.0 } else { 100.0 * k as f64 / tot as f64 };
                    format!("{k} ({pct:.1}%)")
                })
                .collect(),
            missing: missing.clone(),
            test: (i == 0).then(|| test.clone()).flatten(),
        })
        .collect()
}

fn prune_empty_columns(t: ContingencyTable) -> Option<ContingencyTable> {
    let keep: Vec<usize> = (0..t.col_labels.len()).filter(|&j| t.col_totals[j] > 0).collect();
    let counts: Vec<Vec<u64>> = t.counts.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
    ContingencyTable::from_counts(counts).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Group;
    use std::collections::HashMap;

    fn part(groups: &[&[&str]]) -> Partition {
        let gs = groups
            .iter()
            .enumerate()
            .map(|(i, g)| Group {
                label: format!("G{}", i + 1),
                subject_ids: g.iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        Partition::from_groups("test", BTreeMap::new(), gs).unwrap()
    }

    fn table(counts: &[&[u64]]) -> ContingencyTable {
        ContingencyTable::from_counts(counts.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn cross_tab_basics() {
        let a = part(&[&["a", "b"], &["c", "d", "e"]]);
        let self_tab = cross_tab(&a, &a).unwrap();
        assert_eq!(self_tab.counts, vec![vec![2, 0], vec![0, 3]]);
        let one = part(&[&["a", "b", "c", "d", "e"]]);
        assert_eq!(cross_tab(&one, &a).unwrap().counts, vec![vec![2, 3]]);
        let partial = part(&[&["a", "x"], &["c", "y", "z"]]);
        let t = cross_tab(&a, &partial).unwrap();
        assert_eq!(t.total, 2);
        assert_eq!(t.row_absent, vec![1, 2]);
        assert_eq!(t.col_absent, vec![1, 2]);
        assert_eq!(t.transpose(), cross_tab(&partial, &a).unwrap());
        assert_eq!(cross_tab(&a, &part(&[&["q"]])).unwrap_err(), Error::EmptyIntersection);
    }

    #[test]
    fn chi_square_examples() {
        let flat = chi_square_test(&table(&[&[10, 10], &[10, 10]]), false).unwrap();
        assert_eq!(flat.statistic, 0.0);
        assert_eq!(flat.p_value, 1.0);
        let r = chi_square_test(&table(&[&[20, 10], &[10, 20]]), false).unwrap();
        assert!((r.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.df, Some(1.0));
        let yates = chi_square_test(&table(&[&[20, 10], &[10, 20]]), true).unwrap();
        assert!((yates.statistic - 4.0 * 4.5 * 4.5 / 15.0).abs() < 1e-12);
        assert_eq!(chi_square_test(&table(&[&[0, 0], &[1, 2]]), false).unwrap_err(), Error::ZeroExpectedCount);
        assert!(chi_square_test(&table(&[&[1, 2, 3]]), false).is_err());
    }

    #[test]
    fn fisher_examples() {
        let r = fisher_exact_2x2(&table(&[&[1, 0], &[0, 1]])).unwrap();
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let single = fisher_exact_2x2(&table(&[&[0, 0], &[3, 4]])).unwrap();
        assert!((single.p_value - 1.0).abs() < 1e-12);
        // Attainable tables have weights 1, 16, 36, 16, 1 out of 70.
        let tea = fisher_exact_2x2(&table(&[&[3, 1], &[1, 3]])).unwrap();
        assert!((tea.p_value - 34.0 / 70.0).abs() < 1e-12);
        assert!(fisher_exact_2x2(&table(&[&[1, 2, 3], &[1, 2, 3]])).is_err());
    }

    #[test]
    fn t_test_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = two_sample_t_test(&x, &x, false).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(
            two_sample_t_test(&[0.0, 0.0], &[1.0, 1.0], false).unwrap_err(),
            Error::ZeroVariance("two-sample t test".into())
        );
        assert!(two_sample_t_test(&[1.0], &x, false).is_err());
        let w = two_sample_t_test(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0, 8.0], true).unwrap();
        assert!(w.df.unwrap() < 5.0);
    }

    #[test]
    fn anova_examples() {
        let g = vec![vec![1.0, 2.0, 3.0]; 3];
        let r = one_way_anova(&g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let (x, y) = (vec![1.0, 2.5, 3.0, 4.2], vec![2.0, 4.0, 6.5]);
        let t = two_sample_t_test(&x, &y, false).unwrap();
        let f = one_way_anova(&[x, y]).unwrap();
        assert!((f.statistic - t.statistic.powi(2)).abs() < 1e-10);
        assert!((f.p_value - t.p_value).abs() < 1e-10);
        assert!(one_way_anova(&[vec![1.0], vec![2.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn ari_examples() {
        let a = part(&[&["a", "b"], &["c", "d", "e"]]);
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let one = part(&[&["a", "b", "c", "d", "e"]]);
        let singles = part(&[&["a"], &["b"], &["c"], &["d"], &["e"]]);
        assert_eq!(adjusted_rand_index(&one, &singles).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&singles, &singles).unwrap(), 1.0);
        assert!(adjusted_rand_index(&part(&[&["a"]]), &part(&[&["a"]])).is_err());
        assert!(adjusted_rand_index(&a, &part(&[&["q", "r"]])).is_err());
    }

    #[test]
    fn describe_mixed_covariates() {
        let p = part(&[&["a", "b", "c"], &["d", "e"]]);
        let rows: HashMap<String, Vec<Option<String>>> = [
            ("a", "70", "F"),
            ("b", "72", "M"),
            ("c", "74", "F"),
            ("d", "80", "M"),
            ("e", "", "M"),
        ]
        .into_iter()
        .map(|(id, age, sex)| {
            let age = (!age.is_empty()).then(|| age.to_string());
            (id.to_string(), vec![age, Some(sex.to_string())])
        })
        .collect();
        let cov = Covariates {
            names: vec!["age".into(), "sex".into()],
            rows,
        };
        let d = describe(&p, &cov);
        assert_eq!(d.sizes, vec![3, 2]);
        assert_eq!(d.rows[0].cells, vec!["72.00 ± 2.00", "80.00"]);
        assert_eq!(d.rows[0].missing, vec![0, 1]);
        assert_eq!(d.rows[1].level.as_deref(), Some("F"));
        assert_eq!(d.rows[1].cells, vec!["2 (66.7%)", "0 (0.0%)"]);
        assert_eq!(d.rows[2].cells, vec!["1 (33.3%)", "2 (100.0%)"]);
        assert!(d.rows[1].test.is_some());
    }
}
