"""Report aggregation rules on worked examples.

Shows the two summary behaviors of aggregate_rows: a full seeds x folds grid
is summarized as the mean of per-seed means, while a partial grid (one seed
rerunning a single fold) falls back to the primary seed's rows so stray reruns
do not skew the summary.

Run:  python demos/report_aggregation.py
"""

from milcount.evalcv import MetricsRow, aggregate_rows

full_grid = [
    MetricsRow(seed=s, fold=f, val_mae=5.0 + 0.1 * s + 0.2 * f, test_mae=5.5 + 0.05 * s - 0.1 * f)
    for s in (1, 2, 3)
    for f in range(5)
]

print("== full 3-seed x 5-fold grid ==")
for g in aggregate_rows(full_grid, group_by="seed"):
    print("%-8s n=%d  val %.4f  test %.4f" % (g.group, g.n, g.mean["val_mae"], g.mean["test_mae"]))
(overall,) = aggregate_rows(full_grid, group_by="overall")
print("%-8s n=%d  val %.4f +- %.4f  test %.4f +- %.4f" % (
    overall.group, overall.n,
    overall.mean["val_mae"], overall.std["val_mae"],
    overall.mean["test_mae"], overall.std["test_mae"]))

partial = [
    MetricsRow(seed=1, fold=f, val_mae=v, test_mae=t)
    for f, (v, t) in enumerate(
        [(15.7161, 7.9102), (13.1708, 16.709), (15.0519, 9.1602), (14.0468, 9.8206), (14.0468, 9.8206)]
    )
] + [MetricsRow(seed=3, fold=1, val_mae=15.79, test_mae=7.9979)]

print("\n== seed 1 over all folds + a seed-3 rerun of fold 1 ==")
(overall,) = aggregate_rows(partial, group_by="overall")
print("overall uses the primary seed only: n=%d" % overall.n)
print("val  %.2f +- %.2f" % (overall.mean["val_mae"], overall.std["val_mae"]))
print("test %.2f +- %.2f" % (overall.mean["test_mae"], overall.std["test_mae"]))
