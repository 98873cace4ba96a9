"""Where the parameters live in the three models.

The residual CNN and the paper-count Bi-LSTM reading are built at full size
(30 channels x 7,500 samples); the ensemble adds a 1,185-parameter head on top
of the two frozen sub-models.
"""

from iedkit.models import (
    BiLSTMConfig,
    build_bilstm_model,
    build_ensemble,
    build_residual_cnn,
    count_params,
)

cnn = build_residual_cnn()
print("residual CNN")
print(count_params(cnn).format())

for variant in ("paper-count", "paper-text"):
    print(f"\nBi-LSTM ({variant})")
    print(count_params(build_bilstm_model(BiLSTMConfig.named(variant))).format())

ens = build_ensemble(cnn, build_bilstm_model(BiLSTMConfig.named("paper-count")),
                     require_trained=False)
report = count_params(ens)
print(f"\nensemble: {report.total:,} parameters, {report.trainable_total:,} trainable")
