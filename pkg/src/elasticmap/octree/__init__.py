from .morton import MortonKey, decode_array, encode_array, morton_decode, morton_encode
from .tree import OCCUPANCY, TSDF, BlockPool, Octree, VoxelBlock, VoxelData

__all__ = [
    "MortonKey", "morton_encode", "morton_decode", "encode_array", "decode_array",
    "Octree", "VoxelBlock", "VoxelData", "BlockPool", "TSDF", "OCCUPANCY",
]
