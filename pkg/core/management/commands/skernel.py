import numpy as np

from core.exceptions import KernelError
from skernel.samples import dump_sample, load_sample
from ._lab import LabCommand


class Command(LabCommand):
    help = 'Sample the cross-conductivity kernel and its diagnostics'
    command = 'skernel'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--out', help='also write the kernel sample CSV to this path')
        parser.add_argument('--against', help='kernel sample CSV to compare the new sample with')

    def after(self, service, options):
        sample = service.sample
        if options['out']:
            self.write_copy(dump_sample, sample, options['out'], KernelError, 'out')
        if options['against']:
            reference = load_sample(options['against'])
            if reference.shape != sample.shape:
                raise KernelError(f'sample shapes differ: {reference.shape} against {sample.shape}', key='against')
            scale = max(np.abs(sample.values).max(), 1e-300)
            gap = np.abs(sample.values - reference.values).max() / scale
            self.stdout.write(f'largest relative difference with {options["against"]}: {gap:.6e}')
