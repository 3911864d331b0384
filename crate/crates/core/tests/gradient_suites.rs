use denseformer::suites::{self, SuiteResult};

fn assert_all_pass(results: &[SuiteResult]) {
    for r in results.iter().filter(|r| r.report.kink_skipped > 0) {
        println!("{}/{}: {} checked, {} skipped at kinks", r.suite, r.case, r.report.checked, r.report.kink_skipped);
        assert!(r.report.kink_skipped * 4 <= r.report.checked, "too many kink skips in {}/{}", r.suite, r.case);
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.report.passed)
        .map(|r| {
            let mut worst: Vec<(&String, &f64)> = r.report.per_parameter_errors.iter().collect();
            worst.sort_by(|a, b| b.1.total_cmp(a.1));
            worst.truncate(5);
            format!(
                "{}/{}: max rel {:.3e} (tol {:.0e}) {:?} worst {:?}",
                r.suite, r.case, r.report.max_relative_error, r.report.tolerance, r.report.failure, worst
            )
        })
        .collect();
    assert!(failed.is_empty(), "{} failing checks:\n{}", failed.len(), failed.join("\n"));
}

#[test]
fn primitives_over_twenty_seeds() {
    let results = suites::primitive_suite(suites::PRIMITIVE_SEEDS);
    assert!(results.len() >= 20 * 30);
    assert_all_pass(&results);
}

#[test]
fn layers() {
    assert_all_pass(&suites::layer_suite());
}

#[test]
fn dense_block() {
    assert_all_pass(&[suites::dct_block_suite()]);
}

#[test]
fn multi_path_embedding() {
    assert_all_pass(&[suites::mpe_suite()]);
}

#[test]
fn losses() {
    assert_all_pass(&suites::loss_suite());
}

#[test]
fn shrunken_model() {
    assert_all_pass(&[suites::model_suite()]);
}
