from dataclasses import replace

from core.config import DTN_TAGS
from core.exceptions import OperatorError
from dtn.io import dump_operator, load_operator
from ._lab import LabCommand


class Command(LabCommand):
    help = 'Assemble local and full DtN maps for the reference and perturbed fields'
    command = 'dtn'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--gamma', help='field dump to use as the perturbed conductivity')
        parser.add_argument('--tag', choices=DTN_TAGS, help='boundary of the full map (overrides dtn.tag)')
        parser.add_argument('--out', help='also write the perturbed-field operator on the tag to this path')
        parser.add_argument('--against', help='operator dump to compare the perturbed-field operator with')

    def configure(self, config, options):
        if options['tag']:
            config = replace(config, dtn={**config.dtn, 'tag': options['tag']})
        return config

    def after(self, service, options):
        operator = service.full_operators[1]
        if options['out']:
            self.write_copy(dump_operator, operator, options['out'], OperatorError, 'out')
        if options['against']:
            try:
                reference = load_operator(options['against'])
            except OSError as exc:
                raise OperatorError(f'cannot read operator dump: {exc}', key='against') from exc
            gap = (operator - reference).norm()
            self.stdout.write(f'norm of the difference with {options["against"]}: {gap:.6e}')
