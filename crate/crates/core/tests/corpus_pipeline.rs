use tabstruct::annotation::DocAnnotation;
use tabstruct::datagen::{read_corpus, synthesize_page, validate_page, write_corpus, SynthConfig};
use tabstruct::detector::Detection;
use tabstruct::merger::{StructureCell, TableStructure};
use tabstruct::pipeline::{content_boxes, evaluate, from_json, table_result, to_html, to_json, PageResult};

fn mixed() -> SynthConfig {
    SynthConfig { curved_prob: 0.3, span_prob: 0.15, ..SynthConfig::default() }
}

#[test]
fn thousand_pages_validate() {
    let cfg = mixed();
    for seed in 0..1000 {
        let (img, doc) = synthesize_page(&cfg, seed).unwrap();
        assert_eq!((img.width(), img.height()), (doc.width, doc.height), "seed {seed}");
        if let Err(e) = validate_page(&doc) {
            panic!("seed {seed}: {e}");
        }
    }
}

/// The page result a perfect system would produce for `doc`.
fn oracle_result(id: &str, doc: &DocAnnotation) -> PageResult {
    let content = content_boxes(doc);
    let tables = doc
        .tables
        .iter()
        .map(|t| {
            let structure = TableStructure {
                rows: t.rows,
                cols: t.cols,
                cells: t
                    .cells
                    .iter()
                    .map(|c| StructureCell { span: c.span, quad: t.cell_quad(&c.span).unwrap() })
                    .collect(),
            };
            table_result(&Detection { quad: t.quad, score: 1.0 }, &structure, &content, doc.width as f64, doc.height as f64)
        })
        .collect();
    PageResult { image: id.into(), tables }
}

#[test]
fn ground_truth_results_score_perfectly_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &mixed(), 500, 12).unwrap();
    let items = read_corpus(dir.path()).unwrap();
    assert_eq!(items.len(), 12);
    let docs: Vec<DocAnnotation> = items.iter().map(|i| i.annotation.clone()).collect();
    let results: Vec<PageResult> = items.iter().map(|i| oracle_result(&i.id, &i.annotation)).collect();
    for r in &results {
        assert_eq!(&from_json(&to_json(r).unwrap()).unwrap(), r);
    }
    let report = evaluate(&results, &docs).unwrap();
    assert!((report.wavg_f1 - 1.0).abs() < 1e-12, "{report:?}");
    assert!((report.mean_adjacency_f1 - 1.0).abs() < 1e-12);
    assert!((report.mean_teds_struct - 1.0).abs() < 1e-12);

    // dropping every table costs full recall but nothing else breaks
    let empty: Vec<PageResult> = results.iter().map(|r| PageResult { image: r.image.clone(), tables: vec![] }).collect();
    let report = evaluate(&empty, &docs).unwrap();
    assert_eq!(report.wavg_f1, 0.0);
    assert_eq!(report.mean_teds_struct, 0.0);
}

#[test]
fn html_has_one_row_per_grid_row() {
    let (_, doc) = synthesize_page(&mixed(), 3).unwrap();
    for t in &doc.tables {
        let html = to_html(&t.spans(), t.rows);
        assert_eq!(html.matches("<tr>").count(), t.rows);
        assert_eq!(html.matches("<td").count(), t.cells.len());
    }
}

#[test]
fn mismatched_result_count_is_rejected() {
    let (_, doc) = synthesize_page(&mixed(), 4).unwrap();
    assert!(evaluate(&[], &[doc]).is_err());
}
