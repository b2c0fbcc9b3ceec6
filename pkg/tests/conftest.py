from __future__ import annotations

import pytest

from taskfleet.ontology import (
    ABSTRACT_TYPE,
    PHYSICAL_TYPE,
    AttributeConstraint,
    AttributeDef,
    NumericRange,
    ObjectTypeDef,
    Ontology,
    RelationConstraint,
    RelationDef,
    RelationInstance,
    WorldMap,
    WorldObject,
)

POSITION_ATTRS = tuple(
    AttributeDef(name=f"Position{axis}", kind="numeric", unit="m") for axis in "XYZ"
)
ROTATION_ATTRS = tuple(
    AttributeDef(name=f"Rotation{axis}", kind="numeric", unit="deg") for axis in "XYZ"
)
WEIGHT = AttributeDef(name="Weight", kind="numeric", unit="kg", range=NumericRange(0.0, 100.0))
TEXTURE = AttributeDef(name="Texture", kind="text")
SHAPE = AttributeDef(
    name="Shape",
    kind="enumeration",
    values=("CuboidFurnitureLegShape", "JarShape", "BoxShape", "SlabShape"),
)
CAPABILITIES = AttributeDef(name="Capabilities", kind="text")
DIMENSIONS = AttributeDef(
    name="Dimensions",
    kind="complex",
    subattributes=(
        AttributeDef(name="Width", kind="numeric", unit="m"),
        AttributeDef(name="Height", kind="numeric", unit="m"),
        AttributeDef(name="Depth", kind="numeric", unit="m"),
    ),
)


def build_ontology() -> Ontology:
    ont = Ontology()
    ont.define_relation(RelationDef("isOn", 2, (PHYSICAL_TYPE, PHYSICAL_TYPE)))
    ont.define_relation(RelationDef("isIn", 2, (PHYSICAL_TYPE, ABSTRACT_TYPE)))
    ont.define_relation(RelationDef("isAdjacentTo", 2, (PHYSICAL_TYPE, PHYSICAL_TYPE)))
    ont.define_type(
        ObjectTypeDef(
            "CuboidFurnitureLeg",
            parent=PHYSICAL_TYPE,
            attributes=POSITION_ATTRS + ROTATION_ATTRS + (SHAPE, WEIGHT, TEXTURE),
            constraints=(AttributeConstraint("Shape", allowed=("CuboidFurnitureLegShape",)),),
        )
    )
    ont.define_type(
        ObjectTypeDef(
            "Jar",
            parent=PHYSICAL_TYPE,
            attributes=POSITION_ATTRS + (WEIGHT, DIMENSIONS),
        )
    )
    for simple in ("Shelf", "Platform", "Wall", "Floor", "Ceiling", "Window", "Door"):
        ont.define_type(
            ObjectTypeDef(simple, parent=PHYSICAL_TYPE, attributes=POSITION_ATTRS)
        )
    ont.define_type(
        ObjectTypeDef(
            "Robot",
            parent=PHYSICAL_TYPE,
            attributes=POSITION_ATTRS + (CAPABILITIES,),
        )
    )
    ont.define_type(
        ObjectTypeDef(
            "CuboidRoom",
            parent=ABSTRACT_TYPE,
            obligatory_subobject_types=("Wall", "Floor", "Ceiling", "Window", "Door"),
            constraints=(RelationConstraint("isAdjacentTo", ("Wall", "Floor")),),
        )
    )
    ont.define_type(
        ObjectTypeDef("Building", parent=ABSTRACT_TYPE, obligatory_subobject_types=("CuboidRoom",))
    )
    return ont


def positioned(obj_id: str, type_name: str, x: float, y: float, z: float, **extra) -> WorldObject:
    values = {"PositionX": x, "PositionY": y, "PositionZ": z}
    values.update(extra)
    return WorldObject(id=obj_id, type_name=type_name, attribute_values=values)


def build_world() -> WorldMap:
    room = WorldObject(
        id="Room01",
        type_name="CuboidRoom",
        subobjects=[
            positioned("Wall01", "Wall", 0.0, 0.0, 0.0),
            positioned("Wall02", "Wall", 25.0, 0.0, 0.0),
            positioned("Floor01", "Floor", 12.5, 0.0, 6.0),
            positioned("Ceiling01", "Ceiling", 12.5, 4.0, 6.0),
            positioned("Window01", "Window", 0.0, 2.0, 6.0),
            positioned("Door01", "Door", 25.0, 1.0, 6.0),
        ],
        relations=[RelationInstance("isAdjacentTo", ("Wall01", "Floor01"))],
    )
    jar = positioned(
        "Jar002",
        "Jar",
        12.5,
        1.3,
        3.0,
        Weight=0.7,
        Dimensions={"Width": 0.1, "Height": 0.2, "Depth": 0.1},
    )
    jar.relations.append(RelationInstance("isOn", ("Jar002", "Shelf03")))
    shelf = positioned("Shelf03", "Shelf", 12.5, 1.3, 3.0)
    platform = positioned("Platform001", "Platform", 12.5, 1.3, 12.0)
    robot1 = positioned("Robot01", "Robot", 12.5, 1.3, 0.0, Capabilities="TransferObject")
    robot2 = positioned("Robot02", "Robot", 18.0, 1.3, 0.0, Capabilities="TransferObject")
    patrol = positioned("Robot03", "Robot", 0.0, 1.3, 0.0, Capabilities="Recognize")
    root = WorldObject(
        id="Building001",
        type_name="Building",
        subobjects=[room, jar, shelf, platform, robot1, robot2, patrol],
    )
    return WorldMap(root, version=0)


@pytest.fixture
def ontology() -> Ontology:
    return build_ontology()


@pytest.fixture
def world() -> WorldMap:
    return build_world()
