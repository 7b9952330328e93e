"""Network container and checkpoint format.

A checkpoint is one JSON header line (build specification plus the ordered list of stored arrays) followed by
the arrays as raw little-endian float64.
"""
import json
import numpy as np
from pathlib import Path

from spectraseg import errors

_PAYLOAD_DTYPE = np.dtype('<f8')


class Network(object):
    """A root module together with the specification it was built from.

    Args:
        module (Module): Root module.
        spec (dict): JSON-serializable build specification (kind, modality, classes, widths, seed...).
    """
    def __init__(self, module, spec):
        self.module = module
        self.spec = dict(spec)
        self.module.assign_names(spec.get("kind", "net"))

    def forward(self, x, train=False):
        return self.module.forward(np.asarray(x, dtype=np.float64), train)

    __call__ = forward

    def backward(self, grad):
        return self.module.backward(grad)

    def parameters(self):
        return self.module.parameters()

    def named_parameters(self):
        return list(self.module.named_parameters())

    def zero_grad(self):
        self.module.zero_grad()

    def reseed(self, seed):
        self.module.reseed(seed)

    def state(self):
        """Ordered mapping name -> array of every parameter and batchnorm statistic."""
        arrays = {f"param:{k}": p.value for k, p in self.module.named_parameters()}
        arrays.update({f"buffer:{k}": v for k, v in self.module.named_buffers()})
        return arrays

    def load_state(self, arrays):
        params = dict(self.module.named_parameters())
        owners = {}
        for m in self.module.modules():
            for k in getattr(m, "buffers", {}):
                owners[f"{m.name}.{k}"] = m
        prefix = self.module.name + "."
        for key, value in arrays.items():
            kind, name = key.split(":", 1)
            if kind == "param":
                if name not in params or params[name].value.shape != value.shape:
                    raise errors.CheckpointError(f"Parameter {name} does not match the network")
                params[name].value = np.array(value, dtype=np.float64)
            else:
                owner = owners.get(prefix + name)
                if owner is None:
                    raise errors.CheckpointError(f"Buffer {name} does not match the network")
                owner.buffers[name.rsplit(".", 1)[-1]] = np.array(value, dtype=np.float64)

    def copy_state(self):
        return {k: v.copy() for k, v in self.state().items()}


def count_parameters(net):
    """Exact number of trainable scalars (weights, biases, batchnorm scale and shift)."""
    module = net.module if isinstance(net, Network) else net
    return int(sum(p.size for p in module.parameters()))


def save_checkpoint(net, path):
    state = net.state()
    header = {"spec": net.spec, "arrays": [{"name": k, "shape": list(v.shape)} for k, v in state.items()]}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fhandle:
        fhandle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for value in state.values():
            fhandle.write(np.ascontiguousarray(value, dtype=_PAYLOAD_DTYPE).tobytes())


def read_checkpoint(path):
    """Parse a checkpoint file.

    Returns:
        dict, dict: build specification and ordered name -> array mapping.
    """
    with open(path, "rb") as fhandle:
        line = fhandle.readline()
        payload = fhandle.read()
    try:
        header = json.loads(line.decode("utf-8"))
        spec, entries = header["spec"], header["arrays"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as err:
        raise errors.CheckpointError(f"{path}: invalid checkpoint header") from err
    arrays = {}
    offset = 0
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = payload[offset:offset + count * _PAYLOAD_DTYPE.itemsize]
        if len(chunk) != count * _PAYLOAD_DTYPE.itemsize:
            raise errors.CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=_PAYLOAD_DTYPE).reshape(entry["shape"])
        offset += len(chunk)
    if offset != len(payload):
        raise errors.CheckpointError(f"{path}: {len(payload) - offset} unexpected trailing bytes")
    return spec, arrays
