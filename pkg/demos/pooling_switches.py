# Max-pooling switches and unpooling
#
# The decoder never learns where things were; it borrows that from the
# encoder. Each 2x2 max-pool records the offset of its winner, and the
# matching unpool writes values back to exactly those cells.

import numpy as np

from cedn.tensor import maxpool2x2_forward, unpool2x2

rng = np.random.default_rng(0)
x = rng.integers(0, 10, size=(1, 1, 4, 6)).astype(float)
print("input\n", x[0, 0])

y, sw = maxpool2x2_forward(x)
print("pooled\n", y[0, 0])
print("switch offsets (0=top-left, 3=bottom-right)\n", sw.indices[0, 0])

# unpooling puts each pooled value back at its argmax, zeros elsewhere
up = unpool2x2(y, sw)
print("unpooled\n", up[0, 0])

# pooling the unpooled map again recovers y, at least for nonnegative values
z = np.abs(rng.normal(size=y.shape))
print("retraction holds:", np.array_equal(maxpool2x2_forward(unpool2x2(z, sw))[0], z))

# a negative value loses to the zero fill, so the identity is a post-relu property
z[0, 0, 0, 0] = -1.0
print("with a negative entry:", np.array_equal(maxpool2x2_forward(unpool2x2(z, sw))[0], z))
