from conductivity.io import dump_field
from core.exceptions import ConductivityError
from ._lab import LabCommand


class Command(LabCommand):
    help = 'Build the reference and perturbed conductivities, check their bounds and write their dumps'
    command = 'conductivity'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--gamma-out', help='also write the perturbed field dump to this path')

    def after(self, service, options):
        if options['gamma_out']:
            self.write_copy(dump_field, service.gamma1, options['gamma_out'], ConductivityError, 'gamma_out')
