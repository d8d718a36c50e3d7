//! End-to-end acceptance checks: every configuration of the engine must
//! produce the byte-identical output of a plain eager interpretation, and
//! the optimizer's effects must be visible in the execution counters.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use common::{gen_program, run_config, write_file, write_numeric_csv, Quota, RunConfig};
use lfp::canon;
use lfp::dataflow::{build_cfg, solve_liveness, Cfg, LiveSet, LivenessFact};
use lfp::exec::{Backend, Session};
use lfp::frame::csv::{read_csv, ReadOptions};
use lfp::frame::expr::{BinOp, Expr};
use lfp::frame::{Dtype, Scalar};
use lfp::graph::{Action, Graph};
use lfp::meta;
use lfp::optimize::{optimize, OptFlags};
use lfp::script::ast::{Index, PrintArg, ScriptProgram, SExpr, Span, Stmt, StmtKind};
use lfp::script::parse::parse;
use lfp::Error;

fn fnv(s: &str) -> u64 {
    canon::fnv1a(s.as_bytes())
}

fn executions(s: &Session, uid: u32) -> u64 {
    s.stats.nodes.get(&uid).map(|n| n.executions).unwrap_or(0)
}

fn executed_count(s: &Session) -> usize {
    s.stats.nodes.values().filter(|n| n.executions > 0).count()
}

fn find_uids(s: &Session, pred: impl Fn(&Action) -> bool) -> Vec<u32> {
    s.graph
        .uids()
        .filter(|&u| pred(&s.graph.node(u).action))
        .collect()
}

// -- 1 -----------------------------------------------------------------

#[test]
fn generated_programs_agree_across_backends_and_optimization() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0usize;
    for seed in 0..220u64 {
        let g = gen_program(seed, dir.path(), Quota::Mixed);
        let (base, _) = run_config(&g.program, RunConfig::no_opt_eager())
            .unwrap_or_else(|e| panic!("seed {seed}: baseline failed: {e}\n{}", g.source));
        let (opt, _) = run_config(&g.program, RunConfig::full_opt_eager())
            .unwrap_or_else(|e| panic!("seed {seed}: optimized eager failed: {e}\n{}", g.source));
        let (st, _) = run_config(&g.program, RunConfig::full_opt_stream(64))
            .unwrap_or_else(|e| panic!("seed {seed}: optimized stream failed: {e}\n{}", g.source));
        assert_eq!(
            base, opt,
            "seed {seed}: optimized eager output diverged\n{}",
            g.source
        );
        assert_eq!(
            base, st,
            "seed {seed}: optimized stream output diverged\n{}",
            g.source
        );
        assert_eq!(fnv(&base), fnv(&opt), "seed {seed}: eager hash diverged");
        assert_eq!(fnv(&base), fnv(&st), "seed {seed}: stream hash diverged");
        checked += 1;
    }
    let took = started.elapsed();
    assert!(checked >= 200, "only {checked} programs generated");
    assert!(
        took < Duration::from_secs(120),
        "equivalence sweep took {took:?}"
    );
    println!(
        "PASS: {checked} generated programs agree across eager/stream and opt levels ({took:?})"
    );
}

// -- 2 -----------------------------------------------------------------

const WIDE_COLS: [&str; 22] = [
    "vendor_id",
    "pickup_datetime",
    "dropoff_datetime",
    "passenger_count",
    "trip_distance",
    "rate_code",
    "store_flag",
    "pu_location",
    "do_location",
    "payment_type",
    "fare_amount",
    "extra",
    "mta_tax",
    "tip_amount",
    "tolls_amount",
    "improvement_surcharge",
    "total_amount",
    "congestion_surcharge",
    "airport_fee",
    "zone_a",
    "zone_b",
    "zone_c",
];

fn write_wide_csv(dir: &std::path::Path, rows: usize) -> String {
    use std::fmt::Write as _;
    use std::io::Write as _;
    let path = dir.join("rides.csv");
    let f = std::fs::File::create(&path).unwrap();
    let mut w = std::io::BufWriter::with_capacity(1 << 20, f);
    writeln!(w, "{}", WIDE_COLS.join(",")).unwrap();
    let mut line = String::with_capacity(256);
    for i in 0..rows {
        line.clear();
        let day = 1 + i % 28;
        let _ = write!(
            line,
            "{},2020-01-{day:02} {:02}:{:02}:00,2020-01-{day:02} {:02}:{:02}:00,{},{}.{},{},{},{},{},{},{:.1}",
            1 + i % 2,
            i % 24,
            i % 60,
            (i + 9) % 24,
            (i + 17) % 60,
            i % 6,
            i % 400,
            i % 10,
            i % 5,
            if i % 3 == 0 { "Y" } else { "N" },
            i % 250,
            (i * 7) % 250,
            i % 4,
            ((i % 700) as f64 - 50.0) / 10.0,
        );
        for k in 0..11usize {
            let _ = write!(line, ",{}.{}", (i + k * 13) % 90, (i + k) % 100);
        }
        writeln!(w, "{line}").unwrap();
    }
    w.flush().unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn reads_narrow_to_live_columns_on_a_wide_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_wide_csv(dir.path(), 100_000);
    let src = format!(
        "df = read_csv('{path}', parse_dates=['pickup_datetime'])\n\
         df = df[df.fare_amount > 0.0]\n\
         df['day'] = df.pickup_datetime.dt.dayofweek\n\
         df = df.groupby(['day'])['passenger_count'].sum()\n\
         print(df)\n"
    );
    let p = parse(&src).unwrap();

    let (base, before) = run_config(&p, RunConfig::no_opt_eager()).unwrap();
    let parsed_before = before.stats.columns_parsed.values().copied().max().unwrap();
    assert_eq!(parsed_before, 22, "unrewritten read should parse every column");

    let (opt, after) = run_config(&p, RunConfig::full_opt_eager()).unwrap();
    let parsed_after = after.stats.columns_parsed.values().copied().max().unwrap();
    assert_eq!(parsed_after, 3, "rewritten read should parse only live columns");
    assert_eq!(base, opt, "narrowing changed program output");

    // measure the read result itself, full fetch vs the narrowed fetch
    let mut opts = ReadOptions::default();
    opts.parse_dates.insert("pickup_datetime".to_string());
    let (full, _) = read_csv(&path, &opts).unwrap();
    let mut narrowed = opts.clone();
    narrowed.usecols = Some(vec![
        "pickup_datetime".to_string(),
        "passenger_count".to_string(),
        "fare_amount".to_string(),
    ]);
    let (slim, _) = read_csv(&path, &narrowed).unwrap();
    let (a, b) = (full.resident_bytes() as f64, slim.resident_bytes() as f64);
    let reduction = 1.0 - b / a;
    assert!(
        reduction >= 0.75,
        "read result shrank by only {:.1}% ({} -> {} bytes)",
        reduction * 100.0,
        a,
        b
    );
    println!(
        "PASS: wide read narrowed 22 -> 3 columns, result bytes down {:.1}%",
        reduction * 100.0
    );
}

// -- 3 -----------------------------------------------------------------

#[test]
fn pushed_filters_cut_rows_entering_column_writers() {
    use std::io::Write as _;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.csv");
    {
        let f = std::fs::File::create(&path).unwrap();
        let mut w = std::io::BufWriter::with_capacity(1 << 20, f);
        writeln!(w, "sel,a,b").unwrap();
        for i in 0..100_000usize {
            writeln!(w, "{},{}.5,{}.25", i % 10, i % 300, i % 70).unwrap();
        }
        w.flush().unwrap();
    }
    let src = format!(
        "df = read_csv('{}')\n\
         df['m2'] = df.a * 2.0\n\
         df['m3'] = df.b + 1.0\n\
         kept = df[df.sel < 1]\n\
         print(kept)\n",
        path.display()
    );
    let p = parse(&src).unwrap();

    let writer_rows = |s: &Session| -> BTreeMap<String, u64> {
        find_uids(s, |a| matches!(a, Action::SetCol { .. }))
            .into_iter()
            .map(|u| {
                let col = match &s.graph.node(u).action {
                    Action::SetCol { col, .. } => col.clone(),
                    _ => unreachable!(),
                };
                (col, s.stats.nodes.get(&u).map(|n| n.rows_in).unwrap_or(0))
            })
            .collect()
    };

    let (base, plain) = run_config(&p, RunConfig::no_opt_eager()).unwrap();
    let before = writer_rows(&plain);
    assert_eq!(before.get("m2"), Some(&100_000));
    assert_eq!(before.get("m3"), Some(&100_000));

    let (opt, pushed) = run_config(&p, RunConfig::full_opt_eager()).unwrap();
    let after = writer_rows(&pushed);
    assert_eq!(after.get("m2"), Some(&10_000), "filter did not move below m2");
    assert_eq!(after.get("m3"), Some(&10_000), "filter did not move below m3");
    assert_eq!(base, opt, "pushdown changed program output");
    println!("PASS: selective filter pushed below both writers, rows_in 100000 -> 10000");
}

// -- 4 -----------------------------------------------------------------

fn build_sorted_filter_chain(g: &mut Graph, path: &str) -> u32 {
    let read = g
        .add(
            Action::Read {
                path: path.to_string(),
                opts: ReadOptions::default(),
            },
            vec![],
        )
        .unwrap();
    let speed = g
        .add(
            Action::SetCol {
                col: "speed".to_string(),
                expr: Expr::bin(BinOp::Mul, Expr::col("dist"), Expr::Lit(Scalar::Float(2.0))),
            },
            vec![read],
        )
        .unwrap();
    let sorted = g
        .add(
            Action::SortValues {
                by: vec!["vendor".to_string()],
                ascending: true,
            },
            vec![speed],
        )
        .unwrap();
    let f1 = g
        .add(
            Action::Filter {
                pred: Expr::bin(BinOp::Gt, Expr::col("tip"), Expr::Lit(Scalar::Float(0.0))),
            },
            vec![sorted],
        )
        .unwrap();
    let f2 = g
        .add(
            Action::Filter {
                pred: Expr::bin(BinOp::Gt, Expr::col("fare"), Expr::Lit(Scalar::Float(1.0))),
            },
            vec![f1],
        )
        .unwrap();
    g.add(Action::Head { n: 50 }, vec![f2]).unwrap()
}

#[test]
fn chained_filters_merge_into_one_against_the_read() {
    use std::io::Write as _;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trips.csv");
    {
        let f = std::fs::File::create(&path).unwrap();
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "vendor,fare,tip,dist").unwrap();
        for i in 0..2_000usize {
            writeln!(
                w,
                "{},{}.0,{}.5,{}.2",
                i % 5,
                (i % 90) as i64 - 3,
                i % 4,
                i % 40
            )
            .unwrap();
        }
        w.flush().unwrap();
    }
    let path = path.to_string_lossy().into_owned();

    // shape: the two filters must end as one merged filter reading the file
    let mut g = Graph::new();
    let sink = build_sorted_filter_chain(&mut g, &path);
    let mut roots = vec![sink];
    let outcome = optimize(&mut g, &mut roots, &[], OptFlags::all()).unwrap();
    let reach = g.reachable(&roots);
    let filters: Vec<u32> = reach
        .iter()
        .copied()
        .filter(|&u| matches!(g.node(u).action, Action::Filter { .. }))
        .collect();
    assert_eq!(
        filters.len(),
        1,
        "expected one surviving filter, graph:\n{}",
        g.dump(&roots)
    );
    let fsrc = &g.node(filters[0]).sources;
    assert_eq!(fsrc.len(), 1);
    assert!(
        matches!(g.node(fsrc[0]).action, Action::Read { .. }),
        "merged filter is not adjacent to the read:\n{}",
        g.dump(&roots)
    );
    assert!(outcome.report.filters_merged >= 1);

    // value: optimized and untouched graphs compute the same frame
    let mut s_plain = Session::new(Backend::eager(), OptFlags::none());
    let t_plain = build_sorted_filter_chain(&mut s_plain.graph, &path);
    let v_plain = s_plain.compute(t_plain, &[]).unwrap();
    let mut s_opt = Session::new(Backend::eager(), OptFlags::all());
    let t_opt = build_sorted_filter_chain(&mut s_opt.graph, &path);
    let v_opt = s_opt.compute(t_opt, &[]).unwrap();
    let plain_text = canon::canonical_text(v_plain.as_frame().unwrap());
    let opt_text = canon::canonical_text(v_opt.as_frame().unwrap());
    assert_eq!(plain_text, opt_text, "merged filters changed the result");
    println!("PASS: sorted filter chain collapsed to one filter against the read, same rows");
}

// -- 5 -----------------------------------------------------------------

#[test]
fn unused_feature_writers_and_branches_never_execute() {
    use std::io::Write as _;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fares.csv");
    {
        let f = std::fs::File::create(&path).unwrap();
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "pickup,extra,tolls,fare,tip,distance,airport_fee,surcharge").unwrap();
        for i in 0..600usize {
            writeln!(
                w,
                "2020-01-{:02} 10:00:00,{}.0,{}.0,{}.0,{}.5,{}.0,{}.0,{}.5",
                1 + i % 28,
                (i % 5) as i64 - 1,
                (i % 3) * 3,
                (i % 80) as i64 - 4,
                i % 7,
                i % 350,
                if i % 10 < 2 { 5 } else { 0 },
                i % 2
            )
            .unwrap();
        }
        w.flush().unwrap();
    }
    let src = format!(
        "df = read_csv('{}', parse_dates=['pickup'])\n\
         df['day'] = df.pickup.dt.dayofweek\n\
         df['discount'] = df.extra < 0.0\n\
         df['taken_highway'] = df.tolls > 0.0\n\
         df = df[(df.fare > 0.0) & (df.tip > 0.0) & (df.distance <= 300.0)]\n\
         airport_trips = df[df.airport_fee > 0.0]\n\
         long_distance = df[df.fare > df.fare.max() * 0.1]\n\
         total_refund = (long_distance.surcharge * long_distance.fare + long_distance.tolls).sum()\n\
         print(total_refund)\n",
        path.display()
    );
    let p = parse(&src).unwrap();
    const FEATURES: [&str; 3] = ["day", "discount", "taken_highway"];

    let feature_exec = |s: &Session| -> BTreeMap<String, u64> {
        find_uids(s, |a| {
            matches!(a, Action::SetCol { col, .. } if FEATURES.contains(&col.as_str()))
        })
        .into_iter()
        .map(|u| {
            let col = match &s.graph.node(u).action {
                Action::SetCol { col, .. } => col.clone(),
                _ => unreachable!(),
            };
            (col, executions(s, u))
        })
        .collect()
    };
    let airport_exec = |s: &Session| -> u64 {
        let uids = find_uids(s, |a| {
            matches!(a, Action::Filter { pred } if pred.used_columns().contains("airport_fee"))
        });
        assert_eq!(uids.len(), 1, "expected one airport filter node");
        executions(s, uids[0])
    };

    let (base, plain) = run_config(&p, RunConfig::no_opt_eager()).unwrap();
    let plain_features = feature_exec(&plain);
    for f in FEATURES {
        assert_eq!(plain_features.get(f), Some(&1), "{f} should run unoptimized");
    }
    assert_eq!(airport_exec(&plain), 0, "unused branch ran in the plain run");

    let (opt, lean) = run_config(&p, RunConfig::full_opt_eager()).unwrap();
    let lean_features = feature_exec(&lean);
    for f in FEATURES {
        assert_eq!(lean_features.get(f), Some(&0), "{f} was not bypassed");
    }
    assert_eq!(airport_exec(&lean), 0, "unused branch ran in the optimized run");
    assert!(lean.stats.opt.nodes_bypassed >= 3, "{}", lean.stats.opt);
    assert!(
        executed_count(&lean) < executed_count(&plain),
        "optimization did not shrink the executed node set ({} vs {})",
        executed_count(&lean),
        executed_count(&plain)
    );
    assert_eq!(base, opt, "bypasses changed program output");
    println!(
        "PASS: 3 feature writers bypassed, unused branch skipped, executed nodes {} -> {}",
        executed_count(&plain),
        executed_count(&lean)
    );
}

// -- 6 -----------------------------------------------------------------

#[test]
fn live_df_hints_reuse_the_shared_subgraph_across_computes() {
    use std::io::Write as _;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("share.csv");
    {
        let f = std::fs::File::create(&path).unwrap();
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "k,x").unwrap();
        for i in 0..3_000usize {
            writeln!(w, "{},{}.5", i % 6, (i % 25) as i64 - 5).unwrap();
        }
        w.flush().unwrap();
    }
    let tail = "avg = df.y.mean()\nprint(f'avg is {avg}')\n";
    let head = format!(
        "df = read_csv('{}')\n\
         df = df[df.x > 0.0]\n\
         df['y'] = df.x * 2.0\n\
         ppd = df.groupby(['k'])['y'].sum()\n",
        path.display()
    );
    let hinted = parse(&format!(
        "{head}ext.plot(ppd.compute(live_df=[df]))\n{tail}"
    ))
    .unwrap();
    let bare = parse(&format!("{head}ext.plot(ppd.compute())\n{tail}")).unwrap();

    let read_execs = |s: &Session| -> u64 {
        let uids = find_uids(s, |a| matches!(a, Action::Read { .. }));
        assert_eq!(uids.len(), 1);
        executions(s, uids[0])
    };

    let cfg = RunConfig {
        rewrites: false,
        ..RunConfig::full_opt_eager()
    };
    let (out_hinted, s_hinted) = run_config(&hinted, cfg).unwrap();
    let (out_bare, s_bare) = run_config(&bare, cfg).unwrap();

    assert_eq!(out_hinted, out_bare, "hinting changed program output");
    assert_eq!(read_execs(&s_hinted), 1, "hinted run re-read the file");
    assert_eq!(read_execs(&s_bare), 2, "unhinted run should re-read the file");
    assert!(
        s_hinted.stats.nodes.values().all(|n| n.executions <= 1),
        "hinted run executed a node twice"
    );
    assert!(s_hinted.stats.opt.persist_marks >= 1, "{}", s_hinted.stats.opt);
    println!("PASS: shared read+filter+writer ran once with live_df hints, twice without");
}

// -- 7 -----------------------------------------------------------------

#[test]
fn deferred_prints_keep_reference_output_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0usize;
    for seed in 1_000..1_040u64 {
        let g = gen_program(seed, dir.path(), Quota::PrintsAndExt);
        assert!(g.prints >= 3, "seed {seed}: generator quota broke");
        assert!(g.ext_calls >= 1, "seed {seed}: generator quota broke");
        let expected = lfp::reference::run_program(&g.program)
            .unwrap_or_else(|e| panic!("seed {seed}: reference failed: {e}\n{}", g.source));
        let (eager, _) = run_config(&g.program, RunConfig::full_opt_eager())
            .unwrap_or_else(|e| panic!("seed {seed}: engine failed: {e}\n{}", g.source));
        let (stream, _) = run_config(&g.program, RunConfig::full_opt_stream(64))
            .unwrap_or_else(|e| panic!("seed {seed}: stream failed: {e}\n{}", g.source));
        assert_eq!(
            expected, eager,
            "seed {seed}: print order diverged from the reference\n{}",
            g.source
        );
        assert_eq!(
            expected, stream,
            "seed {seed}: stream print order diverged\n{}",
            g.source
        );
        checked += 1;
    }
    println!("PASS: {checked} print-heavy programs match the reference interpreter byte for byte");
}

// -- 8 -----------------------------------------------------------------

fn sp() -> Span {
    Span::default()
}

fn cstmt(kind: StmtKind) -> Stmt {
    Stmt { kind, span: sp() }
}

fn cvar(n: &str) -> SExpr {
    SExpr::Var(n.to_string())
}

fn cattr(base: &str, col: &str) -> SExpr {
    SExpr::Attr {
        base: Box::new(cvar(base)),
        name: col.to_string(),
    }
}

fn cbin(op: BinOp, l: SExpr, r: SExpr) -> SExpr {
    SExpr::Bin {
        op,
        lhs: Box::new(l),
        rhs: Box::new(r),
    }
}

/// Random straight-line/branch/loop programs over a handful of frame
/// variables; only their control-flow and attribute-use structure matters.
fn gen_branchy_program(seed: u64) -> ScriptProgram {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    const FRAMES: [&str; 4] = ["df", "dg", "t0", "t1"];
    const COLS: [&str; 4] = ["a", "b", "c", "d"];
    let pick_frame = |rng: &mut rand_chacha::ChaCha8Rng| FRAMES[rng.gen_range(0..4)];
    let op = |rng: &mut rand_chacha::ChaCha8Rng| -> Stmt {
        let f = pick_frame(rng);
        let g = pick_frame(rng);
        let c = COLS[rng.gen_range(0..4)];
        let c2 = COLS[rng.gen_range(0..4)];
        match rng.gen_range(0..7) {
            0 => cstmt(StmtKind::Assign {
                var: g.to_string(),
                expr: SExpr::Index {
                    base: Box::new(cvar(f)),
                    index: Index::Pred(Box::new(cbin(
                        BinOp::Gt,
                        cattr(f, c),
                        SExpr::Int(1),
                    ))),
                },
            }),
            1 => cstmt(StmtKind::SetColumn {
                var: f.to_string(),
                col: c.to_string(),
                expr: cbin(BinOp::Add, cattr(f, c2), SExpr::Int(1)),
            }),
            2 => cstmt(StmtKind::Assign {
                var: "s".to_string(),
                expr: SExpr::Method {
                    base: Box::new(cattr(f, c)),
                    name: "mean".to_string(),
                    args: vec![],
                    kwargs: vec![],
                },
            }),
            3 => cstmt(StmtKind::Print(PrintArg::Expr(cvar(f)))),
            4 => cstmt(StmtKind::Assign {
                var: g.to_string(),
                expr: cvar(f),
            }),
            5 => cstmt(StmtKind::Assign {
                var: g.to_string(),
                expr: SExpr::Method {
                    base: Box::new(cvar(f)),
                    name: "merge".to_string(),
                    args: vec![cvar(if f == "df" { "dg" } else { "df" })],
                    kwargs: vec![(
                        "on".to_string(),
                        SExpr::List(vec![SExpr::Str("a".to_string())]),
                    )],
                },
            }),
            _ => cstmt(StmtKind::Assign {
                var: g.to_string(),
                expr: SExpr::Method {
                    base: Box::new(cvar(f)),
                    name: "drop".to_string(),
                    args: vec![],
                    kwargs: vec![(
                        "columns".to_string(),
                        SExpr::List(vec![SExpr::Str(c.to_string())]),
                    )],
                },
            }),
        }
    };
    let mut body = vec![
        cstmt(StmtKind::Assign {
            var: "df".to_string(),
            expr: SExpr::FreeCall {
                name: "read_csv".to_string(),
                args: vec![SExpr::Str("left.csv".to_string())],
                kwargs: vec![],
            },
        }),
        cstmt(StmtKind::Assign {
            var: "dg".to_string(),
            expr: SExpr::FreeCall {
                name: "read_csv".to_string(),
                args: vec![SExpr::Str("right.csv".to_string())],
                kwargs: vec![],
            },
        }),
        cstmt(StmtKind::Assign {
            var: "s".to_string(),
            expr: SExpr::Int(0),
        }),
    ];
    for _ in 0..rng.gen_range(1..=3) {
        body.push(op(&mut rng));
    }
    // at least one loop, with a possible branch inside
    let mut loop_body = vec![cstmt(StmtKind::Assign {
        var: "s".to_string(),
        expr: cbin(BinOp::Add, cvar("s"), SExpr::Int(1)),
    })];
    loop_body.push(op(&mut rng));
    if rng.gen_bool(0.4) {
        let else_body = if rng.gen_bool(0.5) {
            vec![op(&mut rng)]
        } else {
            vec![]
        };
        loop_body.push(cstmt(StmtKind::If {
            cond: cbin(BinOp::Gt, cvar("s"), SExpr::Int(1)),
            then_body: vec![op(&mut rng)],
            else_body,
        }));
    }
    body.push(cstmt(StmtKind::While {
        cond: cbin(BinOp::Lt, cvar("s"), SExpr::Int(3)),
        body: loop_body,
    }));
    if rng.gen_bool(0.4) {
        body.push(cstmt(StmtKind::While {
            cond: cbin(BinOp::Lt, cvar("s"), SExpr::Int(5)),
            body: vec![
                cstmt(StmtKind::Assign {
                    var: "s".to_string(),
                    expr: cbin(BinOp::Add, cvar("s"), SExpr::Int(1)),
                }),
                op(&mut rng),
            ],
        }));
    } else if rng.gen_bool(0.5) {
        body.push(cstmt(StmtKind::If {
            cond: cbin(BinOp::Gt, cvar("s"), SExpr::Int(2)),
            then_body: vec![op(&mut rng)],
            else_body: vec![op(&mut rng)],
        }));
    }
    body.push(cstmt(StmtKind::Print(PrintArg::Expr(cvar("df")))));
    ScriptProgram { body }
}

/// Simultaneous whole-CFG rounds applying the per-statement transfers from
/// scratch until nothing changes: a different propagation schedule than the
/// solver's in-place reverse sweep, so convergence bugs there can't hide.
fn iterate_block_facts(
    p: &ScriptProgram,
    cfg: &Cfg,
    facts: &LivenessFact,
) -> (Vec<LiveSet>, Vec<LiveSet>) {
    let stmts = lfp::dataflow::collect_stmts(p);
    let n = cfg.blocks.len();
    let mut live_in = vec![LiveSet::default(); n];
    let mut live_out = vec![LiveSet::default(); n];
    for _ in 0..n * 64 + 8 {
        let mut next_in = Vec::with_capacity(n);
        let mut next_out = Vec::with_capacity(n);
        for b in 0..n {
            let mut o = LiveSet::default();
            for &s in &cfg.blocks[b].succs {
                o.union_with(&live_in[s]);
            }
            let mut i = o.clone();
            for &id in cfg.blocks[b].stmts.iter().rev() {
                i = lfp::dataflow::stmt_transfer(stmts[id], &facts.frames, &i);
            }
            next_out.push(o);
            next_in.push(i);
        }
        if next_in == live_in && next_out == live_out {
            return (live_in, live_out);
        }
        live_in = next_in;
        live_out = next_out;
    }
    panic!("independent iteration failed to converge");
}

#[test]
fn block_liveness_matches_an_independent_fixpoint() {
    let started = Instant::now();
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 100 {
        seed += 1;
        let p = gen_branchy_program(seed);
        let cfg = build_cfg(&p);
        if cfg.blocks.len() > 12 {
            continue;
        }
        let facts = solve_liveness(&p, &cfg);
        let (live_in, live_out) = iterate_block_facts(&p, &cfg, &facts);
        assert_eq!(
            live_in, facts.block_in,
            "seed {seed}: entry sets diverged\n{}",
            lfp::script::emit::emit(&p)
        );
        assert_eq!(
            live_out, facts.block_out,
            "seed {seed}: exit sets diverged\n{}",
            lfp::script::emit::emit(&p)
        );
        checked += 1;
    }
    let took = started.elapsed();
    assert!(took < Duration::from_secs(30), "liveness sweep took {took:?}");
    println!("PASS: {checked} branching programs agree with the independent fixpoint ({took:?})");
}

// -- 9 -----------------------------------------------------------------

#[test]
fn stream_backend_handles_data_beyond_the_memory_budget() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.csv").to_string_lossy().into_owned();
    let bytes = write_numeric_csv(&path, 5_200_000, 50, 4);
    assert!(bytes >= 200_000_000, "fixture only {bytes} bytes");

    let budget = RunConfig {
        stream: true,
        chunk_rows: 65_536,
        mem_budget: Some(32 << 20),
        rewrites: false,
        flags: OptFlags::none(),
        use_meta: false,
    };

    // bounded-state pipeline: grouped sum after a filter
    let grouped = parse(&format!(
        "df = read_csv('{path}')\n\
         df = df[df.f0 > 250.0]\n\
         out = df.groupby(['k'])['f1'].sum()\n\
         print(out)\n"
    ))
    .unwrap();
    let (eager_out, _) = run_config(&grouped, RunConfig::no_opt_eager()).unwrap();
    let (stream_out, _) = run_config(&grouped, budget).unwrap();
    assert_eq!(eager_out, stream_out, "budgeted groupby diverged from eager");

    // full-order sort exceeds the budget in memory; spilled runs must agree
    let sorted = parse(&format!(
        "df = read_csv('{path}')\n\
         df = df[df.f0 > 400.0]\n\
         df = df.sort_values(['f1', 'id'])\n\
         df = df.head(200)\n\
         print(df)\n"
    ))
    .unwrap();
    let (eager_sort, _) = run_config(&sorted, RunConfig::no_opt_eager()).unwrap();
    let (stream_sort, _) = run_config(&sorted, budget).unwrap();
    assert_eq!(eager_sort, stream_sort, "external sort diverged from eager");

    // unbounded grouping state must refuse the budget rather than thrash
    let exploding = parse(&format!(
        "df = read_csv('{path}')\n\
         out = df.groupby(['id'])['f0'].sum()\n\
         print(out)\n"
    ))
    .unwrap();
    match run_config(&exploding, budget) {
        Err(Error::MemoryBudget { .. }) => {}
        Err(e) => panic!("expected a budget refusal, got: {e}"),
        Ok(_) => panic!("high-cardinality grouping ignored the budget"),
    }

    let took = started.elapsed();
    assert!(took < Duration::from_secs(180), "out-of-core sweep took {took:?}");
    println!(
        "PASS: {:.0} MB file grouped and external-sorted under a 32 MB budget ({took:?})",
        bytes as f64 / 1e6
    );
}

// -- 10 ----------------------------------------------------------------

#[test]
fn sidecar_statistics_match_brute_force_counting() {
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0usize;
    for file_no in 0..20usize {
        let rows = 20 + file_no * 20;
        let mut body = String::from("name,grade,tag,score,qty\n");
        for i in 0..rows {
            use std::fmt::Write as _;
            let _ = writeln!(
                body,
                "n{i},{},t{},{},{}",
                ["gold", "silver", "bronze", "tin"][i % 4],
                i % 12,
                if i % 9 == 0 { String::new() } else { format!("{}.5", i % 50) },
                if i % 7 == 0 { String::new() } else { (i % 30).to_string() },
            );
        }
        let path = write_file(dir.path(), &format!("cat_{file_no}.csv"), &body);
        let scanned = meta::scan(&path).unwrap();

        // brute force over the fully parsed file
        let (frame, _) = read_csv(&path, &ReadOptions::default()).unwrap();
        assert_eq!(scanned.row_count, frame.rows() as u64);
        let mut expect_candidates = BTreeSet::new();
        let threshold = (scanned.row_count / 10).min(1024);
        for (i, col) in frame.columns().iter().enumerate() {
            let m = &scanned.columns[i];
            assert_eq!(m.name, col.name);
            assert_eq!(m.dtype, col.dtype(), "{path} column {}", col.name);
            let mut distinct = BTreeSet::new();
            let mut nulls = 0u64;
            for r in 0..col.len() {
                let v = col.get(r);
                if v.is_null() {
                    nulls += 1;
                } else {
                    distinct.insert(v.render());
                }
            }
            assert_eq!(
                m.distinct,
                meta::DistinctCount::Exact(distinct.len() as u64),
                "{path} column {}",
                col.name
            );
            assert_eq!(m.nulls, nulls, "{path} column {}", col.name);
            if col.dtype() == Dtype::Text && (distinct.len() as u64) <= threshold {
                expect_candidates.insert(col.name.clone());
            }
        }
        let readonly: BTreeSet<String> = frame.column_names().into_iter().collect();
        assert_eq!(
            meta::category_candidates(&scanned, &readonly),
            expect_candidates,
            "{path}"
        );
        checked += 1;
    }
    println!("PASS: sidecar stats equal brute-force counts on {checked} files");
}

#[test]
fn category_reads_leave_program_output_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0usize;
    for seed in 0..40u64 {
        let g = gen_program(seed, dir.path(), Quota::Mixed);
        let (base, _) = run_config(&g.program, RunConfig::no_opt_eager()).unwrap();
        for f in &g.files {
            meta::scan(f).unwrap();
        }
        let (opt, _) =
            run_config(&g.program, RunConfig::full_opt_eager().with_meta()).unwrap();
        let (st, _) =
            run_config(&g.program, RunConfig::full_opt_stream(64).with_meta()).unwrap();
        assert_eq!(base, opt, "seed {seed}: metadata changed eager output\n{}", g.source);
        assert_eq!(base, st, "seed {seed}: metadata changed stream output\n{}", g.source);
        checked += 1;
    }
    println!("PASS: dictionary-encoded reads left {checked} program outputs unchanged");
}
