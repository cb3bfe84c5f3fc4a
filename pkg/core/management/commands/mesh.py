from core.exceptions import GeometryError
from geometry.io import dump_mesh
from ._lab import LabCommand


class Command(LabCommand):
    help = 'Build and tag the extended-body mesh and write its dump'
    command = 'mesh'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--mesh-out', help='also write the mesh dump to this path')

    def after(self, service, options):
        if options['mesh_out']:
            self.write_copy(dump_mesh, service.domain, options['mesh_out'], GeometryError, 'mesh_out')
