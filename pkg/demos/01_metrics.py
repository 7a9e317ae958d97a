# Segmentation metrics from a confusion matrix
#
# Every score in this package comes from one integer confusion matrix,
# accumulated over a whole evaluation set. Rows are ground truth, columns
# are predictions.

import numpy as np

from irbseg.datamodel import DEFAULT_CLASSES
from irbseg.metrics import build_report, confusion_matrix, relative_improvement

# %%
# A 4x4 scene: background, one GL blob, a small EP region and a UV strip.

gt = np.array(
    [
        [0, 0, 1, 1],
        [0, 2, 1, 1],
        [3, 3, 3, 0],
        [0, 0, 0, 0],
    ]
)
pred = np.array(
    [
        [0, 0, 1, 1],
        [0, 1, 1, 1],
        [3, 3, 0, 0],
        [0, 0, 0, 3],
    ]
)

cm = confusion_matrix([gt], [pred], DEFAULT_CLASSES)
print(cm.counts)

# %%
# IoU is TP / (TP + FP + FN) per class. Accuracy is per-class recall.
# EP is never predicted, so its IoU is 0 and it ranks worst.

report = build_report(cm)
for k in DEFAULT_CLASSES.ids:
    name = DEFAULT_CLASSES.name_of(k)
    print(f"{name:>3}  IoU {report.per_class_iou[k]:.3f}  Acc {report.per_class_acc[k]:.3f}")
print("mIoU", round(report.miou, 4), "mAcc", round(report.macc, 4))
print("worst to best:", [DEFAULT_CLASSES.name_of(k) for k in report.ranking_worst_to_best])

# %%
# Relative improvement is measured against a baseline mIoU, in percent.

print(f"{relative_improvement(0.78875, 0.71805):.3f} %")
